use clap::Parser;

fn main() {
    let cli = dchain::cli::Cli::parse();
    std::process::exit(dchain::cli::main_with(cli));
}
