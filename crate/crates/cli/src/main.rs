use clap::Parser;

fn main() {
    let cli = nullcal_cli::Cli::parse();
    if let Err(err) = nullcal_cli::run(cli) {
        eprintln!("nullcal: {err}");
        std::process::exit(err.exit_code());
    }
}
