fn main() {
    std::process::exit(robustcnn_cli::run(std::env::args_os()));
}
