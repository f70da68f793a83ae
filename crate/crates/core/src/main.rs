use clap::Parser;

fn main() {
    let cli = unaah::cli::Cli::parse();
    if let Err(e) = unaah::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
