fn main() {
    std::process::exit(foreplan::run_cli());
}
