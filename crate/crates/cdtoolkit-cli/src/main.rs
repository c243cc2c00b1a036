fn main() {
    std::process::exit(cdtoolkit_cli::run(std::env::args_os()));
}
