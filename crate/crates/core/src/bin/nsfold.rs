fn main() {
    std::process::exit(nsfold::cli::cli_main(std::env::args_os()));
}
