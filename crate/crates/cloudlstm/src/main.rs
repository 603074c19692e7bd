use clap::Parser;

fn main() {
    let cli = cloudlstm::cli::Cli::parse();
    if let Err(err) = cloudlstm::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
