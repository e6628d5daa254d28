fn main() {
    let code = dbo_rom::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
