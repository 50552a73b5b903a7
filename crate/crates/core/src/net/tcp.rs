//! Real transport: one TCP connection per request, one frame each way.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::codec::{decode, encode};
use super::membership::{respond, PeerTable};
use super::secure::{Channel, SecurityConfig};
use super::transport::{DeliveryError, Inbound, Transport, TransportDown};

const SERVER_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

pub struct TcpTransport {
    id: u32,
    addr: String,
    started: Instant,
    table: Arc<Mutex<PeerTable>>,
    inbox: Receiver<Inbound>,
    security: Option<Arc<SecurityConfig>>,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

struct Shared {
    id: u32,
    addr: String,
    started: Instant,
    table: Arc<Mutex<PeerTable>>,
    inbox: Sender<Inbound>,
    security: Option<Arc<SecurityConfig>>,
}

fn lock(table: &Mutex<PeerTable>) -> std::sync::MutexGuard<'_, PeerTable> {
    table.lock().unwrap_or_else(|p| p.into_inner())
}

impl TcpTransport {
    /// Binds `listen` (port 0 picks a free port) and starts answering peers.
    pub fn bind(id: u32, listen: &str, security: Option<SecurityConfig>) -> io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        let addr = listener.local_addr()?.to_string();
        let started = Instant::now();
        let table = Arc::new(Mutex::new(PeerTable::new(id)));
        let (tx, rx) = mpsc::channel();
        let security = security.map(Arc::new);
        let shutdown = Arc::new(AtomicBool::new(false));
        let shared = Arc::new(Shared {
            id,
            addr: addr.clone(),
            started,
            table: Arc::clone(&table),
            inbox: tx,
            security: security.clone(),
        });
        let stop = Arc::clone(&shutdown);
        let acceptor = std::thread::Builder::new()
            .name(format!("swarm-accept-{id}"))
            .spawn(move || accept_loop(listener, shared, stop))?;
        Ok(Self {
            id,
            addr,
            started,
            table,
            inbox: rx,
            security,
            shutdown,
            acceptor: Some(acceptor),
        })
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, stop: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let conn = Arc::clone(&shared);
        let spawned = std::thread::Builder::new()
            .name(format!("swarm-conn-{}", shared.id))
            .spawn(move || {
                if let Err(e) = serve(stream, &conn) {
                    if !matches!(
                        e.kind(),
                        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset
                    ) {
                        debug!("node {}: connection closed: {e}", conn.id);
                    }
                }
            });
        if let Err(e) = spawned {
            warn!("node {}: cannot spawn connection handler: {e}", shared.id);
        }
    }
}

fn serve(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_read_timeout(Some(SERVER_IDLE_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let mut channel = Channel::server(stream, shared.security.as_deref())?;
    loop {
        let frame = channel.recv_frame()?;
        let msg = match decode(&frame) {
            Ok(m) => m,
            Err(e) => {
                warn!("node {}: dropping malformed frame: {e}", shared.id);
                return Ok(());
            }
        };
        if let (Some(sec), Some(remote)) = (shared.security.as_deref(), channel.remote_static()) {
            if !sec.sender_matches(msg.sender_id, remote) {
                warn!(
                    "node {}: sender {} not bound to channel key",
                    shared.id, msg.sender_id
                );
                return Ok(());
            }
        }
        let now = shared.started.elapsed().as_millis() as u64;
        let response = respond(&mut lock(&shared.table), &shared.addr, now, msg);
        if let Some(message) = response.delivered {
            // The receiver may already be gone during shutdown.
            let _ = shared.inbox.send(Inbound {
                arrived_ms: now,
                message,
            });
        }
        if let Some(reply) = response.reply {
            let bytes =
                encode(&reply).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            channel.send_frame(&bytes)?;
        }
    }
}

fn delivery_error(e: io::Error) -> DeliveryError {
    match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => DeliveryError::Timeout,
        io::ErrorKind::PermissionDenied => DeliveryError::Auth(e.to_string()),
        io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
            DeliveryError::Protocol(e.to_string())
        }
        _ => DeliveryError::ConnRefused,
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, DeliveryError> {
    addr.to_socket_addrs()
        .map_err(|_| DeliveryError::ConnRefused)?
        .next()
        .ok_or(DeliveryError::ConnRefused)
}

impl Transport for TcpTransport {
    fn node_id(&self) -> u32 {
        self.id
    }

    fn address(&self) -> &str {
        &self.addr
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn request(
        &mut self,
        addr: &str,
        msg: &super::codec::SwarmMessage,
        timeout: Duration,
    ) -> Result<super::codec::SwarmMessage, DeliveryError> {
        let frame = encode(msg)?;
        let stream =
            TcpStream::connect_timeout(&resolve(addr)?, timeout).map_err(delivery_error)?;
        stream
            .set_read_timeout(Some(timeout))
            .map_err(delivery_error)?;
        stream
            .set_write_timeout(Some(timeout))
            .map_err(delivery_error)?;
        stream.set_nodelay(true).map_err(delivery_error)?;
        let mut channel =
            Channel::client(stream, self.security.as_deref()).map_err(delivery_error)?;
        channel.send_frame(&frame).map_err(delivery_error)?;
        let reply = decode(&channel.recv_frame().map_err(delivery_error)?)?;
        if let (Some(sec), Some(remote)) = (self.security.as_deref(), channel.remote_static()) {
            if !sec.sender_matches(reply.sender_id, remote) {
                return Err(DeliveryError::Auth(format!(
                    "reply sender {} not bound to key",
                    reply.sender_id
                )));
            }
        }
        Ok(reply)
    }

    fn next_inbound(&mut self, deadline_ms: u64) -> Result<Option<Inbound>, TransportDown> {
        let wait = Duration::from_millis(deadline_ms.saturating_sub(self.now_ms()));
        match self.inbox.recv_timeout(wait) {
            Ok(inbound) => Ok(Some(inbound)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => {
                Err(TransportDown(format!("node {} listener stopped", self.id)))
            }
        }
    }

    fn table(&self) -> PeerTable {
        lock(&self.table).clone()
    }

    fn with_table(&mut self, f: &mut dyn FnMut(&mut PeerTable)) {
        f(&mut lock(&self.table));
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the blocking accept so the thread sees the flag.
        if let Ok(addr) = resolve(&self.addr) {
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
        }
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}
