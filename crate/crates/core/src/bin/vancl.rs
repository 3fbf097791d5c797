use clap::Parser;

fn main() {
    let cli = vancl::cli::Cli::parse();
    if let Err(e) = vancl::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
