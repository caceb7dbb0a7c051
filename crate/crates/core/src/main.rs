fn main() {
    std::process::exit(concave_npg::harness::cli::main_with_args(std::env::args_os()));
}
