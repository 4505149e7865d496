fn main() {
    std::process::exit(trialscreen::run(std::env::args_os()));
}
