fn main() {
    std::process::exit(stable_fk::cli::run_from_env());
}
