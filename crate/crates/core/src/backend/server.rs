use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::http::WireError;
use super::{
    to_wire_samples, Backend, GenRequest, ScoreRequest, WireGenerateRequest, WireGenerateResponse,
    WireJudgeResponse, WireScoreResponse, WireSpan,
};
use crate::error::{Error, Result};

/// A running HTTP front-end for a [`Backend`]; stops when dropped.
pub struct MockServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the worker threads exit.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if self.workers.is_empty() {
            return;
        }
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Serves `/v1/generate`, `/v1/score` and `/v1/judge` for `backend` on `addr`
/// (use port 0 for an ephemeral port) with `workers` handler threads.
pub fn serve(backend: Arc<dyn Backend>, addr: &str, workers: usize) -> Result<MockServer> {
    let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Config(format!("{addr} is not an IP address")))?;
    let server = Arc::new(server);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = server.clone();
            let backend = backend.clone();
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    handle(&*backend, req);
                }
            })
        })
        .collect();
    Ok(MockServer {
        server,
        addr: bound,
        workers,
    })
}

const ROUTES: [&str; 3] = ["/v1/generate", "/v1/score", "/v1/judge"];

fn json_header() -> Header {
    Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header")
}

fn error_body(e: &Error) -> (u16, String) {
    let (status, kind) = match e {
        Error::Config(_) => (400, "config"),
        Error::Validation(_) => (422, "validation"),
        Error::Json(_) => (400, "protocol"),
        _ => (500, "internal"),
    };
    let body = serde_json::to_string(&WireError {
        error: e.to_string(),
        kind: kind.into(),
    })
    .unwrap_or_default();
    (status, body)
}

fn route(backend: &dyn Backend, path: &str, body: &str) -> Result<String> {
    match path {
        "/v1/generate" => {
            let w: WireGenerateRequest = serde_json::from_str(body)?;
            let req = GenRequest {
                prompt: w.prompt,
                decode: w.decode,
                num_samples: w.num_samples,
                max_tokens: w.max_tokens,
            };
            let slots = backend.generate(&req)?;
            Ok(serde_json::to_string(&WireGenerateResponse {
                samples: to_wire_samples(&slots),
            })?)
        }
        "/v1/score" => {
            let req: ScoreRequest = serde_json::from_str(body)?;
            let score = backend.score(&req)?;
            Ok(serde_json::to_string(&WireScoreResponse { score })?)
        }
        "/v1/judge" => {
            let req: ScoreRequest = serde_json::from_str(body)?;
            let j = backend.judge_spans(&req)?;
            Ok(serde_json::to_string(&WireJudgeResponse {
                spans: j.spans.iter().map(WireSpan::from).collect(),
            })?)
        }
        other => unreachable!("unrouted path {other}"),
    }
}

fn handle(backend: &dyn Backend, mut req: Request) {
    let (status, body) = if *req.method() != Method::Post {
        (405, r#"{"error":"method not allowed","kind":"protocol"}"#.to_string())
    } else {
        let mut body = String::new();
        match req.as_reader().read_to_string(&mut body) {
            Err(e) => error_body(&Error::Validation(format!("unreadable body: {e}"))),
            Ok(_) => {
                let path = req.url().split('?').next().unwrap_or("").to_string();
                if !ROUTES.contains(&path.as_str()) {
                    (404, format!(r#"{{"error":"no route for {path}","kind":"protocol"}}"#))
                } else {
                    match route(backend, &path, &body) {
                        Ok(b) => (200, b),
                        Err(e) => error_body(&e),
                    }
                }
            }
        }
    };
    let resp = Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header());
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}
