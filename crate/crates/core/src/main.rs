fn main() {
    let code = lexnmt::cli::run_command(std::env::args_os());
    std::process::exit(code);
}
