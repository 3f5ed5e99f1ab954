//! Client for an external predictor speaking line-delimited JSON over TCP.
//!
//! The client opens with a handshake line naming the protocol, version,
//! feature and family; the server answers with its own handshake (or an
//! `{"error": ...}` line). Requests then flow one per line and may be
//! answered in any order: responses are matched back to windows by id.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ContextWindow, PredictError, Predictor, MAX_WINDOW};
use crate::conditional::DistFamily;
use crate::corpus::FeatureKind;

pub const PROTOCOL_NAME: &str = "ctxmi-predict";
pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
    pub feature: String,
    pub family: String,
}

impl Handshake {
    pub fn new(feature: FeatureKind, family: DistFamily) -> Self {
        Handshake {
            protocol: PROTOCOL_NAME.to_owned(),
            version: PROTOCOL_VERSION,
            feature: feature.name().to_owned(),
            family: family.name().to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRequest {
    pub id: u64,
    pub tokens: Vec<String>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemError {
    pub code: String,
    pub message: String,
}

/// Exactly one of `params` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ItemError>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HandshakeReply {
    Accept(Handshake),
    Refuse { error: String },
}

fn violation(line: &str, message: impl Into<String>) -> PredictError {
    PredictError::Protocol {
        line: line.trim_end().to_owned(),
        message: message.into(),
    }
}

/// Predictor served by another process.
#[derive(Debug, Clone)]
pub struct RemotePredictor {
    endpoint: String,
    feature: FeatureKind,
    family: DistFamily,
    max_window: usize,
    timeout: Duration,
}

impl RemotePredictor {
    pub fn new(endpoint: impl Into<String>, feature: FeatureKind, family: DistFamily) -> Self {
        RemotePredictor {
            endpoint: endpoint.into(),
            feature,
            family,
            max_window: MAX_WINDOW,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn with_max_window(mut self, max_window: usize) -> Self {
        self.max_window = max_window.clamp(1, MAX_WINDOW);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn connect(&self) -> Result<(TcpStream, BufReader<TcpStream>), PredictError> {
        let stream = TcpStream::connect(&self.endpoint)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let hello = Handshake::new(self.feature, self.family);
        let mut w = &stream;
        serde_json::to_writer(&mut w, &hello).expect("handshake serializes");
        w.write_all(b"\n")?;
        w.flush()?;

        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(PredictError::Handshake("connection closed".into()));
        }
        match serde_json::from_str::<HandshakeReply>(&line) {
            Ok(HandshakeReply::Refuse { error }) => Err(PredictError::Handshake(error)),
            Ok(HandshakeReply::Accept(h)) => {
                if h.protocol != PROTOCOL_NAME || h.version != PROTOCOL_VERSION {
                    return Err(PredictError::Handshake(format!(
                        "server speaks {} v{}",
                        h.protocol, h.version
                    )));
                }
                if h.family != hello.family || h.feature != hello.feature {
                    return Err(PredictError::Handshake(format!(
                        "server serves {}/{} but {}/{} was requested",
                        h.feature, h.family, hello.feature, hello.family
                    )));
                }
                Ok((stream, reader))
            }
            Err(e) => Err(violation(&line, e.to_string())),
        }
    }
}

impl Predictor for RemotePredictor {
    fn family(&self) -> DistFamily {
        self.family
    }

    fn max_window(&self) -> usize {
        self.max_window
    }

    fn predict_raw(&self, windows: &[ContextWindow<'_>]) -> Result<Vec<[f64; 2]>, PredictError> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let (stream, mut reader) = self.connect()?;
        let requests: Vec<String> = windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let req = ProtocolRequest {
                    id: i as u64,
                    tokens: w.tokens().iter().map(|t| (*t).to_owned()).collect(),
                    targets: vec![w.target_index()],
                };
                serde_json::to_string(&req).expect("request serializes")
            })
            .collect();

        std::thread::scope(|scope| {
            let writer = scope.spawn(|| -> std::io::Result<()> {
                let mut out = BufWriter::new(&stream);
                for r in &requests {
                    out.write_all(r.as_bytes())?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
                drop(out);
                stream.shutdown(Shutdown::Write)
            });

            let mut results: Vec<Option<[f64; 2]>> = vec![None; windows.len()];
            let mut remaining = windows.len();
            let mut line = String::new();
            let outcome = loop {
                if remaining == 0 {
                    break Ok(());
                }
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        break Err(PredictError::Transport(std::io::Error::new(
                            std::io::ErrorKind::UnexpectedEof,
                            format!("connection closed with {remaining} windows unanswered"),
                        )))
                    }
                    Ok(_) => {}
                    Err(e) => break Err(e.into()),
                }
                let resp: ProtocolResponse = match serde_json::from_str(&line) {
                    Ok(r) => r,
                    Err(e) => break Err(violation(&line, e.to_string())),
                };
                let Some(slot) = results.get_mut(resp.id as usize) else {
                    break Err(violation(&line, format!("unknown id {}", resp.id)));
                };
                match (resp.params, resp.error) {
                    (_, Some(err)) => {
                        break Err(PredictError::Item {
                            id: resp.id,
                            code: err.code,
                            message: err.message,
                        })
                    }
                    (Some(params), None) => {
                        if params.len() != 1 {
                            break Err(violation(
                                &line,
                                format!("expected 1 parameter pair, got {}", params.len()),
                            ));
                        }
                        if slot.is_some() {
                            break Err(violation(&line, format!("duplicate id {}", resp.id)));
                        }
                        *slot = Some(params[0]);
                        remaining -= 1;
                    }
                    (None, None) => break Err(violation(&line, "neither params nor error")),
                }
            };
            if outcome.is_err() {
                // unblock the writer if the server stopped reading
                let _ = stream.shutdown(Shutdown::Both);
            }
            let written = writer.join().expect("writer thread panicked");
            outcome?;
            written?;
            Ok(results
                .into_iter()
                .map(|r| r.expect("all answered"))
                .collect())
        })
    }
}
