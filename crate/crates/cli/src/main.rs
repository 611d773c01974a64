fn main() {
    std::process::exit(sketchfill_cli::run(std::env::args_os()));
}
