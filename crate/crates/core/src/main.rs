fn main() { std::process::exit(homoghj::cli::run()); }
