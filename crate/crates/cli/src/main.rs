use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    let argv: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let verbosity = facerep_cli::Cli::try_parse_from(&argv).map(|c| c.flags.verbose).unwrap_or(0);
    let level = match verbosity {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    std::process::exit(facerep_cli::run(argv));
}
