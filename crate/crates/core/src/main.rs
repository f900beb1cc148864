fn main() {
    std::process::exit(timbre_cnn::cli::main_with_args(std::env::args_os()));
}
