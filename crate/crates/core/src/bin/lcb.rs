fn main() {
    std::process::exit(latent_control::cli::main_with_args(std::env::args_os()));
}
