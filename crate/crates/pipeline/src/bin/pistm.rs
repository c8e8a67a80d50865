fn main() {
    std::process::exit(pistm_pipeline::cli::main_with_args(std::env::args_os()));
}
