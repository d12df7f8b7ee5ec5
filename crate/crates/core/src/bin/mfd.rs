fn main() {
    std::process::exit(manifold_diffusion::cli::run(std::env::args_os()));
}
