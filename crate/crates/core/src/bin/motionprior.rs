fn main() {
    std::process::exit(motionprior::harness::cli_run(std::env::args_os()));
}
