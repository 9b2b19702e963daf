use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("DOCPARSE_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();

    let mut bind = std::env::var("DOCPARSE_BIND").unwrap_or_else(|_| docparse_service::DEFAULT_BIND.to_string());
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--bind" => match args.next() {
                Some(v) => bind = v,
                None => {
                    eprintln!("--bind needs an address");
                    return ExitCode::from(2);
                }
            },
            "-h" | "--help" => {
                println!("usage: docparse-server [--bind ADDR]\n\nDefault address {}; DOCPARSE_BIND and DOCPARSE_LOG are honoured.", docparse_service::DEFAULT_BIND);
                return ExitCode::SUCCESS;
            }
            other => {
                eprintln!("unexpected argument {other:?}");
                return ExitCode::from(2);
            }
        }
    }

    let listener = match tokio::net::TcpListener::bind(&bind).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {bind}: {e}");
            return ExitCode::from(2);
        }
    };
    tracing::info!(address = %bind, "listening");
    match docparse_service::serve(listener).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("server error: {e}");
            ExitCode::FAILURE
        }
    }
}
