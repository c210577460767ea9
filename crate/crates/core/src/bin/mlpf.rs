fn main() {
    std::process::exit(mlpf::harness::cli::run(std::env::args_os()));
}
