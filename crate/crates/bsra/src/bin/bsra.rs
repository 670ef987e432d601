use clap::Parser;

fn main() -> anyhow::Result<()> {
    bsra::cli::run(bsra::cli::Cli::parse())
}
