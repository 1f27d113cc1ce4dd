fn main() {
    std::process::exit(latent_edit::cli::main_with(std::env::args_os()));
}
