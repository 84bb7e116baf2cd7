use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = peakshave::cli::Cli::parse();
    if let Err(err) = peakshave::cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(peakshave::cli::exit_code(&err));
    }
}
