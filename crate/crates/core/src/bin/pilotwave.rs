fn main() {
    std::process::exit(pilotwave::cli::run());
}
