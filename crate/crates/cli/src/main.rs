use clap::Parser;

fn main() {
    let cli = ulkit_cli::Cli::parse();
    if let Err(err) = ulkit_cli::run(&cli) {
        eprintln!("error: {err:#}");
        std::process::exit(ulkit_cli::exit_code(&err));
    }
}
