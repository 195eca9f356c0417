use clap::Parser;

fn main() {
    let cli = usn::cli::Cli::parse();
    std::process::exit(usn::cli::run(cli));
}
