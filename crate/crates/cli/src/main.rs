fn main() {
    std::process::exit(trusspose_cli::run(std::env::args_os()));
}
