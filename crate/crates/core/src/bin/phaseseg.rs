fn main() {
    std::process::exit(phaseseg::cli::dispatch(std::env::args_os()));
}
