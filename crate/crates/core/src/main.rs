use clap::Parser;

fn main() {
    let args = rnr::cli::Args::parse();
    std::process::exit(rnr::cli::main_with_args(args));
}
