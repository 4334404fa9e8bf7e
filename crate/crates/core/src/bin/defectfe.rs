fn main() {
    std::process::exit(defectfe::cli::main_with_args(std::env::args_os()));
}
