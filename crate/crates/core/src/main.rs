fn main() {
    std::process::exit(simam_sv::cli::run(std::env::args()));
}
