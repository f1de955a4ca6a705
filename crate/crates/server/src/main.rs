use tdprio_server::{poll_tracker, router, state_from_config, Config};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt().with_env_filter(EnvFilter::from_default_env().add_directive("info".parse()?)).init();
    let cfg = Config::from_env()?;
    let state = state_from_config(&cfg)?;
    if state.tracker.is_some() {
        tokio::spawn(poll_tracker(state.clone()));
    }
    let listener = tokio::net::TcpListener::bind(cfg.listen).await?;
    tracing::info!("listening on {} with data in {}", cfg.listen, cfg.data_dir.display());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
