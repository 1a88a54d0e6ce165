fn main() { let cli = <chemostat_qsd::cli::Cli as clap::Parser>::parse(); std::process::exit(chemostat_qsd::cli::run(&cli)); }
