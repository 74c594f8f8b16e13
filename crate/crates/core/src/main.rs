fn main() {
    std::process::exit(amlsvm::cli::run(std::env::args_os()));
}
