fn main() {
    std::process::exit(geoharm::cli::main());
}
