//! Static file server for the browser UI bundle.
//!
//! Serves a directory (normally the built `ui/dist`) plus `/bridge.json`,
//! which tells the page where the WebSocket bridge listens.

use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use tiny_http::{Header, Response, Server};

pub struct UiServer {
    addr: SocketAddr,
    server: Arc<Server>,
    worker: Option<JoinHandle<()>>,
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request path to a file below `root`, refusing anything that would
/// step outside it.
pub fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    let mut out = root.to_path_buf();
    for part in path.split('/').filter(|p| !p.is_empty()) {
        let comp = Path::new(part).components().collect::<Vec<_>>();
        match comp.as_slice() {
            [Component::Normal(n)] => out.push(n),
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("ascii header")
}

impl UiServer {
    /// Serves `root` on `addr`. `ws` is advertised through `/bridge.json`.
    pub fn bind(addr: &str, root: PathBuf, ws: Option<SocketAddr>) -> io::Result<UiServer> {
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("UI directory {} does not exist (build the UI first)", root.display()),
            ));
        }
        let server = Server::http(addr).map_err(|e| io::Error::other(e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("UI server is not on an IP socket"))?;
        let server = Arc::new(server);
        let srv = server.clone();
        let worker = thread::Builder::new().name("ui-http".into()).spawn(move || {
            for req in srv.incoming_requests() {
                let url = req.url().to_string();
                let resp = if url == "/bridge.json" {
                    let body = serde_json::json!({ "ws": ws.map(|a| format!("ws://{a}")) }).to_string();
                    Response::from_string(body).with_header(header("Content-Type", "application/json"))
                } else {
                    match resolve(&root, &url).and_then(|p| fs::read(&p).ok().map(|b| (p, b))) {
                        Some((p, body)) => {
                            Response::from_data(body).with_header(header("Content-Type", content_type(&p)))
                        }
                        None => Response::from_string("not found").with_status_code(404),
                    }
                };
                if let Err(e) = req.respond(resp) {
                    log::debug!("UI response failed: {e}");
                }
            }
        })?;
        Ok(UiServer {
            addr: local,
            server,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }
}

impl Drop for UiServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
