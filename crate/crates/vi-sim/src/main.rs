fn main() {
    std::process::exit(vi_sim::cli::run(std::env::args_os()));
}
