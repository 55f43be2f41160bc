//! WebSocket bridge for the browser UI. Each text frame carries exactly the
//! JSON envelope used on the TCP transport, control topics included.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::{Message as WsMessage, WebSocket};

use crate::broker::{Broker, QueuePolicy, Subscription};
use crate::transport::{dispatch, subscribed_json, Incoming};

const POLL: Duration = Duration::from_millis(5);

pub struct WsBridge {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl WsBridge {
    pub fn bind(addr: impl ToSocketAddrs, broker: Broker, queue: QueuePolicy) -> io::Result<WsBridge> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = thread::Builder::new().name("ws-accept".into()).spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let broker = broker.clone();
                let flag = flag.clone();
                let _ = thread::Builder::new()
                    .name("ws-conn".into())
                    .spawn(move || serve(stream, broker, queue, flag));
            }
        })?;
        Ok(WsBridge {
            addr: local,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for WsBridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn serve(stream: TcpStream, broker: Broker, queue: QueuePolicy, stop: Arc<AtomicBool>) {
    let _ = stream.set_nodelay(true);
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("websocket handshake failed: {e}");
            return;
        }
    };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let mut publisher = broker.publisher();
    let mut subs: Vec<Subscription> = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                let reply = match dispatch(text.as_str(), &broker, &mut publisher, queue) {
                    Ok(Incoming::Published) => None,
                    Ok(Incoming::Subscribe(sub, topics)) => {
                        subs.push(sub);
                        Some(subscribed_json(&topics))
                    }
                    Err(e) => Some(e),
                };
                if let Some(r) = reply {
                    if ws.send(WsMessage::text(r)).is_err() {
                        break;
                    }
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(e) => {
                log::debug!("websocket closed: {e}");
                break;
            }
        }
        if !pump(&mut ws, &subs) {
            break;
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

/// Forwards everything queued on the subscriptions; false if the peer is gone.
fn pump(ws: &mut WebSocket<TcpStream>, subs: &[Subscription]) -> bool {
    let mut sent = false;
    for sub in subs {
        while let Some(msg) = sub.try_recv() {
            if ws.write(WsMessage::text(msg.to_json())).is_err() {
                return false;
            }
            sent = true;
        }
    }
    !sent || ws.flush().is_ok()
}
