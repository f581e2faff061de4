//! Pose/slice streaming socket.
//!
//! The client sends text messages `{"type":"pose","controls":{...}}`. Each
//! accepted pose is answered by one binary slice frame followed by one text
//! overlay message with the same `frame_id`, in the order poses arrived.
//! Rejected messages get a text `{"type":"error",...}` and the socket stays
//! open. A newer socket on the same procedure closes the older one with code
//! [`SUPERSEDED_CLOSE_CODE`].

use std::sync::Arc;

use axum::extract::ws::{CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use biopsim::probe::ProbeControls;
use serde::{Deserialize, Serialize};

use crate::api::{ApiError, AppState, LiveSlot};
use crate::live::{LiveError, Overlay, RenderedFrame};

pub const SUPERSEDED_CLOSE_CODE: u16 = 4000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Pose { controls: ProbeControls },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Overlay(Overlay),
    Error { message: String },
}

pub async fn stream(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let slot = s.slot(&id)?;
    Ok(ws.on_upgrade(move |socket| run(socket, slot)))
}

fn text(msg: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(msg).expect("server messages serialize").into())
}

async fn render(slot: &Arc<LiveSlot>, controls: ProbeControls) -> Result<RenderedFrame, String> {
    let slot = slot.clone();
    tokio::task::spawn_blocking(move || {
        let t = slot.now_ms();
        slot.lock().pose_update(&controls, t)
    })
    .await
    .map_err(|e| e.to_string())?
    .map_err(|e: LiveError| e.to_string())
}

async fn run(mut socket: WebSocket, slot: Arc<LiveSlot>) {
    let mut generation = slot.socket_generation.subscribe();
    let mine = {
        let mut g = 0;
        slot.socket_generation.send_modify(|v| {
            *v += 1;
            g = *v;
        });
        g
    };
    generation.mark_unchanged();

    loop {
        tokio::select! {
            changed = generation.changed() => {
                if changed.is_err() || *generation.borrow() != mine {
                    let frame = CloseFrame { code: SUPERSEDED_CLOSE_CODE, reason: "superseded".into() };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    return;
                }
            }
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { return };
                let reply = match msg {
                    Message::Text(t) => match serde_json::from_str::<ClientMessage>(t.as_str()) {
                        Ok(ClientMessage::Pose { controls }) => render(&slot, controls).await,
                        Err(e) => Err(format!("bad message: {e}")),
                    },
                    Message::Close(_) => return,
                    Message::Binary(_) => Err("binary messages are not accepted".to_string()),
                    Message::Ping(_) | Message::Pong(_) => continue,
                };
                let sent = match reply {
                    Ok(r) => {
                        let bytes = r.frame.encode();
                        match socket.send(Message::Binary(bytes.into())).await {
                            Ok(()) => socket.send(text(&ServerMessage::Overlay(r.overlay))).await,
                            Err(e) => Err(e),
                        }
                    }
                    Err(message) => socket.send(text(&ServerMessage::Error { message })).await,
                };
                if sent.is_err() {
                    return;
                }
            }
        }
    }
}
