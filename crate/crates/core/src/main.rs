fn main() {
    std::process::exit(stbeam::cli::run_cli_env());
}
