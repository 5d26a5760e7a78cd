use clap::Parser;

fn main() {
    let cli = imaginet_cli::Cli::parse();
    std::process::exit(imaginet_cli::run(cli));
}
