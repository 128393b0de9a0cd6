fn main() { std::process::exit(impact_bsde::cli::main()) }
