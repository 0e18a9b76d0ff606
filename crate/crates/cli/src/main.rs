use clap::Parser;

fn main() {
    let cli = xhmc_cli::Cli::parse();
    if let Err(e) = xhmc_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
