fn main() {
    std::process::exit(motion_prior::harness::dispatch(std::env::args_os()));
}
