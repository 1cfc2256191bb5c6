fn main() {
    std::process::exit(markerpose::run_cli());
}
