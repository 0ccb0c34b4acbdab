fn main() {
    std::process::exit(pcc_cli::dispatch(std::env::args_os()));
}
