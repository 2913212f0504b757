//! TCP client for an external critic, plus an echo server that speaks the
//! same protocol for conformance tests.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{self, Message, MessageType, WireError};
use super::{Critic, CriticError, CriticRequest, CriticResponse, Result};

/// Overrides the configured bridge address when set.
pub const ADDR_ENV: &str = "RIGMOTION_BRIDGE_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:7654";

pub struct BridgeCritic {
    addr: String,
    timeout: Duration,
    attempts: usize,
    conn: Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>,
}

impl BridgeCritic {
    /// `addr` unless the override variable is set.
    pub fn new(addr: Option<&str>) -> Self {
        let addr = std::env::var(ADDR_ENV).ok().or(addr.map(str::to_string)).unwrap_or_else(|| DEFAULT_ADDR.to_string());
        Self { addr, timeout: Duration::from_secs(300), attempts: 3, conn: None }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_attempts(mut self, attempts: usize) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&mut self) -> io::Result<()> {
        if self.conn.is_some() {
            return Ok(());
        }
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{} resolved to no address", self.addr));
        for sa in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&sa, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    s.set_nodelay(true)?;
                    self.conn = Some((BufReader::new(s.try_clone()?), BufWriter::new(s)));
                    return Ok(());
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    /// Sends one message and reads the reply, reconnecting on transport
    /// failures. Error frames from the bridge are not retried.
    fn exchange(&mut self, msg: &Message) -> Result<Message> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = self.connect().map_err(WireError::Io).and_then(|_| {
                let (r, w) = self.conn.as_mut().expect("connected");
                wire::write_message(w, msg)?;
                wire::read_message(r)
            });
            match outcome {
                Ok(reply) if reply.header.kind == MessageType::Error => {
                    return Err(CriticError::Remote(reply.header.message.unwrap_or_default()));
                }
                Ok(reply) => return Ok(reply),
                Err(WireError::Io(e)) => {
                    self.conn = None;
                    if attempt >= self.attempts {
                        return Err(CriticError::Transport { attempts: attempt, source: e });
                    }
                    log::warn!("bridge {}: {e}; retrying ({attempt}/{})", self.addr, self.attempts);
                    std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                }
                Err(e) => {
                    self.conn = None;
                    return Err(CriticError::BadResponse(e.to_string()));
                }
            }
        }
    }
}

impl Critic for BridgeCritic {
    fn name(&self) -> &str {
        "bridge"
    }

    fn evaluate(&mut self, req: &CriticRequest) -> Result<CriticResponse> {
        let reply = self.exchange(&wire::encode_request(req))?;
        let resp = wire::decode_response(&reply).map_err(|e| CriticError::BadResponse(e.to_string()))?;
        resp.validate()?;
        Ok(resp)
    }

    fn frames_vjp(&mut self, req: &CriticRequest, latent_shape: &[usize], cotangent: &[f64]) -> Result<Vec<f64>> {
        let reply = self.exchange(&wire::encode_vjp_request(req, latent_shape, cotangent))?;
        wire::decode_vjp_response(&reply).map_err(|e| CriticError::BadResponse(e.to_string()))
    }
}

/// Reply of the echo server: latents are the frames, `eps_text` echoes the
/// frame payload, the other two estimates are zero, `w̄ = 1 − τ`.
pub fn echo_reply(msg: &Message) -> Message {
    match msg.header.kind {
        MessageType::Request => match wire::decode_request(msg) {
            Ok(req) => {
                let n = req.frames.len();
                let mut reply = wire::encode_response(&CriticResponse {
                    latent_shape: req.frame_shape.clone(),
                    eps_uncond: vec![0.0; n],
                    eps_text: vec![0.0; n],
                    eps_injected: vec![0.0; n],
                    schedule_weight: 1.0 - req.tau,
                });
                // send the original f32 values back untouched
                reply.payloads[1] = msg.payloads[0].clone();
                reply
            }
            Err(e) => Message::error(e.to_string()),
        },
        MessageType::VjpRequest if msg.payloads.len() == 2 && msg.header.shapes[0] == msg.header.shapes[1] => {
            let mut header = wire::Header::new(MessageType::VjpResponse);
            header.shapes = vec![msg.header.shapes[1].clone()];
            Message { header, payloads: vec![msg.payloads[1].clone()] }
        }
        other => Message::error(format!("echo server cannot answer {}", other.as_str())),
    }
}

/// Background echo server on a local port; stops when dropped.
pub struct EchoServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl EchoServer {
    pub fn spawn() -> io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let flag = Arc::clone(&flag);
                std::thread::spawn(move || serve_connection(stream, &flag));
            }
        });
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

fn serve_connection(stream: TcpStream, stop: &AtomicBool) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut r = BufReader::new(read_half);
    let mut w = BufWriter::new(stream);
    while !stop.load(Ordering::SeqCst) {
        let reply = match wire::read_message(&mut r) {
            Ok(msg) => echo_reply(&msg),
            Err(WireError::Io(_)) => return,
            // malformed header: answer and keep the connection
            Err(e) => Message::error(e.to_string()),
        };
        if wire::write_message(&mut w, &reply).is_err() {
            return;
        }
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
