fn main() {
    std::process::exit(cinesynth::cli::run(std::env::args_os()));
}
