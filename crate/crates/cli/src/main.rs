fn main() {
    std::process::exit(letsne_cli::run(std::env::args_os()));
}
