fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(awmp::cli::run_main(&args));
}
