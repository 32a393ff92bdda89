//! `/sessions/{id}/frames`: the biofeedback stream. A subscriber gets the
//! latest frame on connect and every later frame in order. When it falls
//! behind it skips to the newest frame. Outside a biofeedback S3 it gets
//! periodic `inactive` status messages instead.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::watch;

use crate::api::AppState;
use crate::driver::{Slot, WireFrame};
use crate::GatewayError;

pub const INACTIVE_EVERY: Duration = Duration::from_millis(500);

pub async fn frames(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, GatewayError> {
    let slot = state.slot(&id).ok_or(GatewayError::NotFound(id))?;
    let closing = state.closing();
    Ok(ws.on_upgrade(move |socket| pump(socket, slot, closing)))
}

async fn pump(socket: WebSocket, slot: Arc<Slot>, mut closing: watch::Receiver<bool>) {
    let (mut tx, mut rx) = socket.split();
    // subscribe before reading the latest frame so nothing falls in between
    let mut frames = slot.subscribe();
    let status = slot.watch_status();
    let mut last_t: Option<u64> = None;

    let send_frame = |f: &WireFrame, last_t: &mut Option<u64>| -> Option<Message> {
        if last_t.is_some_and(|t| f.t <= t) {
            return None;
        }
        *last_t = Some(f.t);
        Some(Message::Text(f.text.as_str().into()))
    };

    if status.borrow().streaming {
        if let Some(m) = slot.latest().and_then(|f| send_frame(&f, &mut last_t)) {
            if tx.send(m).await.is_err() {
                return;
            }
        }
    }

    let mut tick = tokio::time::interval(INACTIVE_EVERY);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        let msg = tokio::select! {
            r = frames.recv() => match r {
                Ok(f) => send_frame(&f, &mut last_t),
                Err(RecvError::Lagged(_)) => slot.latest().and_then(|f| send_frame(&f, &mut last_t)),
                Err(RecvError::Closed) => break,
            },
            _ = tick.tick() => {
                let s = *status.borrow();
                (!s.streaming).then(|| {
                    let body = json!({ "status": "inactive", "phase": s.phase });
                    Message::Text(body.to_string().into())
                })
            }
            _ = closing.changed() => {
                let _ = tx.send(Message::Close(None)).await;
                break;
            }
            incoming = rx.next() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => None,
            },
        };
        if let Some(m) = msg {
            if tx.send(m).await.is_err() {
                break;
            }
        }
    }
}
