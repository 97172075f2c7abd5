fn main() {
    std::process::exit(oct_denoise::cli::dispatch(std::env::args()));
}
