use clap::Parser;

fn main() {
    let cli = nfpe_cli::Cli::parse();
    if let Err(e) = nfpe_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
