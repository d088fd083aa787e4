fn main() {
    std::process::exit(ctc_asr::cli::run(std::env::args_os()));
}
