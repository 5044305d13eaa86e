use clap::Parser;

fn main() {
    let cli = papez::cli::Cli::parse();
    if let Err(e) = papez::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(papez::cli::exit_code(&e));
    }
}
