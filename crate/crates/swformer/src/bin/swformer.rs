use clap::Parser;
use swformer::cli;

fn main() {
    let args = cli::Cli::parse();
    if let Err(e) = cli::run(args) {
        eprintln!("{}", cli::error_line(&e));
        std::process::exit(e.exit_code());
    }
}
