fn main() {
    std::process::exit(hclm_lab::cli_main(std::env::args_os()));
}
