//! Plays a recorded gaze log into a running server as a gaze source.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::time::{sleep_until, timeout, Instant};
use tokio_tungstenite::tungstenite::Message;

use crate::model::{GazeSample, LayoutManifest, ViewportState};
use crate::protocol::{ClientMessage, GazeMessage, Role};

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// `ws://host:port`
    pub url: String,
    /// Time scale; 0 sends as fast as possible.
    pub speed: f64,
    pub session: Option<String>,
    pub participant: String,
    /// How long to wait for the server to acknowledge the end of the session.
    pub close_timeout: Duration,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            url: "ws://127.0.0.1:8765".into(),
            speed: 1.0,
            session: None,
            participant: String::new(),
            close_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayStats {
    pub samples_sent: usize,
    pub wall: Duration,
    pub log_span_us: i64,
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("connection: {0}")]
    Connection(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("speed must be finite and >= 0")]
    Speed,
    #[error("server did not close the session within {0:?}")]
    CloseTimeout(Duration),
    #[error("server error: {0}")]
    Server(String),
}

/// Sends hello, layout, an identity viewport, every sample, then `end`, and
/// waits until the server closes the connection (which it does after the
/// session has been finalized). `progress` counts samples sent so far.
pub async fn replay(
    samples: &[GazeSample],
    manifest: Option<&LayoutManifest>,
    opts: &ReplayOptions,
    progress: Option<Arc<AtomicUsize>>,
) -> Result<ReplayStats, ReplayError> {
    if !(opts.speed >= 0.0 && opts.speed.is_finite()) {
        return Err(ReplayError::Speed);
    }
    let (ws, _) = tokio_tungstenite::connect_async(opts.url.as_str()).await?;
    let (mut tx, mut rx) = ws.split();
    let text = |m: ClientMessage| Message::text(m.to_json());

    tx.feed(text(ClientMessage::Hello {
        role: Role::Source,
        session: opts.session.clone(),
        participant: opts.participant.clone(),
    }))
    .await?;
    let t0 = samples.first().map_or(0, |s| s.t_us);
    if let Some(m) = manifest {
        tx.feed(text(ClientMessage::Layout(m.clone()))).await?;
    }
    tx.feed(text(ClientMessage::Viewport(ViewportState::identity(t0)))).await?;
    tx.flush().await?;

    let start = Instant::now();
    for (i, s) in samples.iter().enumerate() {
        let msg = text(ClientMessage::Gaze(GazeMessage::from(s)));
        if opts.speed > 0.0 {
            // absolute deadlines: sleep jitter does not accumulate
            let offset = (s.t_us - t0) as f64 / 1e6 / opts.speed;
            sleep_until(start + Duration::from_secs_f64(offset.max(0.0))).await;
            tx.send(msg).await?;
        } else {
            tx.feed(msg).await?;
            if i % 256 == 255 {
                tx.flush().await?;
            }
        }
        if let Some(p) = &progress {
            p.store(i + 1, Ordering::Relaxed);
        }
    }
    tx.send(text(ClientMessage::End)).await?;
    let wall = start.elapsed();

    let drain = async {
        while let Some(msg) = rx.next().await {
            match msg? {
                Message::Close(_) => break,
                Message::Text(t) => {
                    if let Ok(crate::protocol::ServerMessage::Error { message }) =
                        crate::protocol::ServerMessage::parse(t.as_str())
                    {
                        return Err(ReplayError::Server(message));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    };
    match timeout(opts.close_timeout, drain).await {
        Ok(r) => r?,
        Err(_) => return Err(ReplayError::CloseTimeout(opts.close_timeout)),
    }
    Ok(ReplayStats { samples_sent: samples.len(), wall, log_span_us: samples.last().map_or(0, |s| s.t_us - t0) })
}
