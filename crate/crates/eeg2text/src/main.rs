use std::process::exit;

fn main() {
    exit(eeg2text::cli::run(std::env::args_os()));
}
