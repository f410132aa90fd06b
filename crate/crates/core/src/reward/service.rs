//! Reward request/response protocol, shared by the file stage and the
//! line-oriented TCP listener. Each request and each response is one JSON line.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{reward_batch, RewardBreakdown, RewardError, RewardMode, ReferenceSet};
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub record_id: String,
    pub rollout_texts: Vec<String>,
    pub mode: RewardMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub record_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rewards: Vec<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn handle(
    request: &RewardRequest,
    references: &ReferenceSet,
    taxonomy: &Taxonomy,
) -> Result<Vec<RewardBreakdown>, RewardError> {
    reward_batch(
        &request.record_id,
        &request.rollout_texts,
        references.get(&request.record_id),
        request.mode,
        taxonomy,
    )
}

/// Answers one request line. Malformed requests and reward errors come back
/// as a response carrying `error`.
pub fn handle_line(line: &str, references: &ReferenceSet, taxonomy: &Taxonomy) -> String {
    let response = match serde_json::from_str::<RewardRequest>(line) {
        Ok(request) => match handle(&request, references, taxonomy) {
            Ok(rewards) => RewardResponse {
                record_id: request.record_id,
                rewards,
                error: None,
            },
            Err(e) => RewardResponse {
                record_id: request.record_id,
                rewards: Vec::new(),
                error: Some(e.to_string()),
            },
        },
        Err(e) => RewardResponse {
            record_id: String::new(),
            rewards: Vec::new(),
            error: Some(format!("bad request: {e}")),
        },
    };
    serde_json::to_string(&response).expect("response serializes")
}

fn serve_connection(
    stream: TcpStream,
    references: &ReferenceSet,
    taxonomy: &Taxonomy,
) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = handle_line(&line, references, taxonomy);
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves requests until the listener fails. One thread per connection;
/// the reference set is shared read-only.
pub fn serve(
    listener: TcpListener,
    references: Arc<ReferenceSet>,
    taxonomy: Arc<Taxonomy>,
) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let references = Arc::clone(&references);
        let taxonomy = Arc::clone(&taxonomy);
        std::thread::spawn(move || {
            if let Err(e) = serve_connection(stream, &references, &taxonomy) {
                log::warn!("reward connection closed: {e}");
            }
        });
    }
    Ok(())
}
