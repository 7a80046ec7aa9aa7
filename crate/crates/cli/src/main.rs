use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_env("GRIDGATE_LOG").unwrap_or_else(|_| EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = gridgate_cli::run(std::env::args_os(), &mut out, &mut err).await;
    std::process::exit(code);
}
