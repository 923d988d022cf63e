fn main() {
    std::process::exit(semantic_palette_cli::run(std::env::args_os()));
}
