fn main() {
    std::process::exit(sstdma::cli::main_with_args(std::env::args_os()));
}
