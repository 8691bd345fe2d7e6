use clap::Parser;

fn main() {
    std::process::exit(vebm::cli::run(vebm::cli::Cli::parse()))
}
