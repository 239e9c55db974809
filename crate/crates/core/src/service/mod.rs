//! Streaming service over newline-delimited events, on stdin/stdout or TCP.

mod config;
mod engine;
mod stats;

use std::io::{BufRead, BufReader};
use std::net::{TcpListener, ToSocketAddrs};
use std::sync::Arc;

pub use config::ServiceConfig;
pub use engine::Engine;
pub use stats::{LatencyHistogram, ServiceStats};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::protocol::{FinalRecord, OutputEvent};

/// Accepts connections forever; each connection is an independent event stream
/// sharing the engine's detector, session limit and counters.
pub fn serve_tcp<T: Scalar + 'static>(engine: Arc<Engine<T>>, addr: impl ToSocketAddrs) -> Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    serve_listener(engine, listener)
}

pub fn serve_listener<T: Scalar + 'static>(engine: Arc<Engine<T>>, listener: TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let engine = Arc::clone(&engine);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            let result = stream
                .try_clone()
                .map_err(Error::from)
                .and_then(|reader| engine.serve_stream(BufReader::new(reader), stream));
            if let Err(e) = result {
                log::warn!("connection {peer}: {e}");
            }
        });
    }
    Ok(())
}

/// Final decision records from service output, sorted by call id.
pub fn collect_finals<R: BufRead>(output: R) -> Result<Vec<FinalRecord>> {
    let mut finals = Vec::new();
    for (i, line) in output.lines().enumerate() {
        let event: OutputEvent = serde_json::from_str(&line?)
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if let OutputEvent::FinalDecision(f) = event {
            finals.push(f);
        }
    }
    finals.sort_by(|a, b| a.call_id.cmp(&b.call_id));
    Ok(finals)
}
