fn main() {
    std::process::exit(infobound::cli::main_with_args(std::env::args_os()));
}
