fn main() {
    std::process::exit(skrock::cli_main(std::env::args_os()));
}
