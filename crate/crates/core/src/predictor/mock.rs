//! In-process server for the predictor protocol, used by tests and by the
//! `sweep` command when no external model is configured.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::remote::{Handshake, ItemError, ProtocolRequest, ProtocolResponse};
use super::{PredictorModel, PROTOCOL_NAME, PROTOCOL_VERSION};

/// What the server sends back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Params(Vec<[f64; 2]>),
    Error(ItemError),
    /// Sent verbatim, for exercising client error paths.
    Raw(String),
}

pub type ServeHandler = Arc<dyn Fn(&ProtocolRequest) -> Reply + Send + Sync>;

struct Shared {
    handshake: Handshake,
    handler: ServeHandler,
    /// Responses are buffered in groups of this size and sent in reverse.
    reorder: usize,
    received: Mutex<Vec<String>>,
    stop: AtomicBool,
}

pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds an ephemeral local port and serves connections until dropped.
    pub fn spawn(handshake: Handshake, handler: ServeHandler) -> std::io::Result<Self> {
        Self::spawn_reordering(handshake, handler, 1)
    }

    /// Like [`MockServer::spawn`] but answers each group of `reorder`
    /// requests in reverse order.
    pub fn spawn_reordering(
        handshake: Handshake,
        handler: ServeHandler,
        reorder: usize,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            handshake,
            handler,
            reorder: reorder.max(1),
            received: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let s = Arc::clone(&shared);
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if s.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                let s = Arc::clone(&s);
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(conn, &s) {
                        log::debug!("mock connection ended: {e}");
                    }
                });
            }
        });
        Ok(MockServer {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    /// Answers every target with the same raw parameters.
    pub fn fixed(handshake: Handshake, raw: [f64; 2]) -> std::io::Result<Self> {
        Self::spawn(
            handshake,
            Arc::new(move |req: &ProtocolRequest| Reply::Params(vec![raw; req.targets.len()])),
        )
    }

    /// Serves a trained built-in model.
    pub fn serving(model: Arc<PredictorModel>) -> std::io::Result<Self> {
        let handshake = Handshake::new(model.feature, model.family);
        Self::spawn(handshake, model_handler(model))
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Every line received so far, handshakes included, in arrival order.
    pub fn received(&self) -> Vec<String> {
        self.shared.received.lock().expect("lock").clone()
    }
}

pub fn model_handler(model: Arc<PredictorModel>) -> ServeHandler {
    Arc::new(move |req: &ProtocolRequest| {
        let tokens: Vec<&str> = req.tokens.iter().map(String::as_str).collect();
        match model.predict_positions(&tokens, &req.targets) {
            Ok(p) => Reply::Params(p),
            Err(e) => Reply::Error(ItemError {
                code: "bad_window".into(),
                message: e.to_string(),
            }),
        }
    })
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(conn: TcpStream, s: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut out = BufWriter::new(conn);
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(());
    }
    s.received
        .lock()
        .expect("lock")
        .push(line.trim_end().to_owned());
    let hello: Result<Handshake, _> = serde_json::from_str(&line);
    let refusal = match &hello {
        Err(e) => Some(format!("malformed handshake: {e}")),
        Ok(h) if h.protocol != PROTOCOL_NAME => Some(format!("unknown protocol {}", h.protocol)),
        Ok(h) if h.version != PROTOCOL_VERSION => {
            Some(format!("unsupported version {}", h.version))
        }
        Ok(_) => None,
    };
    if let Some(error) = refusal {
        writeln!(out, "{}", serde_json::json!({ "error": error }))?;
        return out.flush();
    }
    writeln!(
        out,
        "{}",
        serde_json::to_string(&s.handshake).expect("serializes")
    )?;
    out.flush()?;

    let mut pending: Vec<String> = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        s.received
            .lock()
            .expect("lock")
            .push(line.trim_end().to_owned());
        let reply = match serde_json::from_str::<ProtocolRequest>(&line) {
            Ok(req) => match (s.handler)(&req) {
                Reply::Raw(text) => text,
                Reply::Params(p) => response_line(req.id, Some(p), None),
                Reply::Error(e) => response_line(req.id, None, Some(e)),
            },
            Err(e) => serde_json::json!({
                "id": serde_json::Value::Null,
                "error": { "code": "malformed_request", "message": e.to_string() }
            })
            .to_string(),
        };
        pending.push(reply);
        if pending.len() >= s.reorder {
            flush_reversed(&mut out, &mut pending)?;
        }
    }
    flush_reversed(&mut out, &mut pending)
}

fn response_line(id: u64, params: Option<Vec<[f64; 2]>>, error: Option<ItemError>) -> String {
    serde_json::to_string(&ProtocolResponse { id, params, error }).expect("serializes")
}

fn flush_reversed(out: &mut impl Write, pending: &mut Vec<String>) -> std::io::Result<()> {
    for r in pending.drain(..).rev() {
        out.write_all(r.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
