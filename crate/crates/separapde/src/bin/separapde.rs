fn main() { std::process::exit(separapde::cli::run()); }
