use std::io::Write;

fn main() {
    let level = std::env::var(ambiweight_cli::LOG_ENV).unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .init();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    let code = ambiweight_cli::run(std::env::args_os(), &mut out, &mut err);
    let _ = out.flush();
    std::process::exit(code);
}
