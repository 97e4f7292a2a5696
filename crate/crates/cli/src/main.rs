fn main() {
    std::process::exit(storm_cli::main_with_args(std::env::args()));
}
