fn main() {
    std::process::exit(factorpref_cli::run(std::env::args_os()));
}
