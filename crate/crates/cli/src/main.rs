fn main() {
    std::process::exit(boostwood_cli::run(std::env::args_os()));
}
