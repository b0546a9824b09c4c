use clap::Parser;

fn main() {
    let cli = degas_cli::Cli::parse();
    if let Err(e) = degas_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
