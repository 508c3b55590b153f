//! The mediator: workers connect and offer a service, clients request a
//! cascade of services, and the mediator pipes each session's messages
//! client -> stage 1 -> ... -> stage N -> client.
//!
//! Every connection has a reader thread that handles its lines in order and
//! a writer thread draining a bounded queue, so a slow consumer stalls only
//! the producers feeding it. The registry is a single mutex; forwarding
//! happens outside it.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use crate::error::{Error, Result};
use crate::protocol::{CascadeSpec, MessageType, ServiceName, WireMessage};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy)]
pub struct MediatorConfig {
    /// Messages buffered per connection before producers stall.
    pub queue_capacity: usize,
    pub max_line_bytes: usize,
}

impl Default for MediatorConfig {
    fn default() -> Self {
        MediatorConfig {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            max_line_bytes: DEFAULT_MAX_LINE_BYTES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MediatorStats {
    pub workers: usize,
    pub idle_workers: usize,
    pub sessions: usize,
    pub errors_sent: u64,
}

type ConnId = u64;

struct Conn {
    tx: SyncSender<String>,
    stream: TcpStream,
}

struct WorkerEntry {
    conn: ConnId,
    service: ServiceName,
    session: Option<String>,
}

struct Session {
    client: ConnId,
    stages: Vec<ConnId>,
    services: Vec<ServiceName>,
    last_seq: HashMap<ConnId, u64>,
    eos_from: HashSet<ConnId>,
}

#[derive(Default)]
struct Registry {
    conns: HashMap<ConnId, Conn>,
    /// In registration order, which is also the selection order.
    workers: Vec<WorkerEntry>,
    sessions: HashMap<String, Session>,
    next_session: u64,
}

struct Shared {
    registry: Mutex<Registry>,
    next_conn: AtomicU64,
    errors_sent: AtomicU64,
    stopping: AtomicBool,
    config: MediatorConfig,
}

/// Messages to deliver once the registry lock is released.
type Outbox = Vec<(SyncSender<String>, WireMessage)>;

enum Flow {
    Continue,
    Close,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn deliver(&self, outbox: Outbox) {
        for (tx, msg) in outbox {
            if msg.kind == MessageType::Error {
                self.errors_sent.fetch_add(1, Ordering::Relaxed);
            }
            // A closed receiver means the peer is gone; cleanup handles it.
            let _ = tx.send(msg.to_line());
        }
    }

    fn handle_line(&self, id: ConnId, tx: &SyncSender<String>, line: &str) -> Flow {
        let mut outbox = Outbox::new();
        let flow = match WireMessage::parse_line(line) {
            Err(e) => {
                outbox.push((tx.clone(), WireMessage::error(e.to_string())));
                Flow::Continue
            }
            Ok(msg) => self.dispatch(id, tx, msg, &mut outbox),
        };
        self.deliver(outbox);
        flow
    }

    fn dispatch(
        &self,
        id: ConnId,
        tx: &SyncSender<String>,
        msg: WireMessage,
        outbox: &mut Outbox,
    ) -> Flow {
        let reply = |outbox: &mut Outbox, m: WireMessage| outbox.push((tx.clone(), m));
        match msg.kind {
            MessageType::Offer => {
                let raw = msg.service.unwrap_or_default();
                match raw.parse::<ServiceName>() {
                    Err(e) => {
                        reply(outbox, WireMessage::error(e.to_string()));
                        return Flow::Close;
                    }
                    Ok(service) => {
                        let mut reg = self.lock();
                        if reg.workers.iter().any(|w| w.conn == id) {
                            drop(reg);
                            reply(
                                outbox,
                                WireMessage::error("connection already offers a service"),
                            );
                        } else {
                            log::info!("worker {id} offers {service}");
                            reg.workers.push(WorkerEntry {
                                conn: id,
                                service: service.clone(),
                                session: None,
                            });
                            drop(reg);
                            reply(
                                outbox,
                                WireMessage {
                                    service: Some(service.to_string()),
                                    ..WireMessage::accept()
                                },
                            );
                        }
                    }
                }
            }
            MessageType::Request => {
                self.open_cascade(id, tx, msg.cascade.unwrap_or_default(), outbox)
            }
            MessageType::Data | MessageType::Eos => self.route(id, tx, msg, outbox),
            MessageType::Error => match msg.session.clone() {
                Some(session) => {
                    let mut reg = self.lock();
                    let member = reg
                        .sessions
                        .get(&session)
                        .is_some_and(|s| s.client == id || s.stages.contains(&id));
                    if member {
                        let reason = msg
                            .message
                            .unwrap_or_else(|| "peer reported an error".into());
                        let stage = stage_label(&reg, &session, id);
                        teardown(
                            &mut reg,
                            &session,
                            &format!("{stage}: {reason}"),
                            id,
                            outbox,
                        );
                    } else {
                        drop(reg);
                        reply(
                            outbox,
                            WireMessage::error(format!("unknown session {session:?}")),
                        );
                    }
                }
                None => log::warn!(
                    "connection {id} reported: {}",
                    msg.message.unwrap_or_default()
                ),
            },
            MessageType::Accept | MessageType::Reject => {
                reply(
                    outbox,
                    WireMessage::error(format!("unexpected {} message", msg.kind.as_str())),
                );
            }
        }
        Flow::Continue
    }

    fn open_cascade(
        &self,
        id: ConnId,
        tx: &SyncSender<String>,
        names: Vec<String>,
        outbox: &mut Outbox,
    ) {
        let spec = match CascadeSpec::parse(&names) {
            Ok(spec) => spec,
            Err(e @ Error::IncompatibleCascade) => {
                outbox.push((tx.clone(), WireMessage::reject(e.to_string())));
                return;
            }
            Err(e) => {
                outbox.push((tx.clone(), WireMessage::error(e.to_string())));
                return;
            }
        };
        let mut reg = self.lock();
        let mut chosen: Vec<usize> = Vec::with_capacity(spec.services.len());
        let mut missing = Vec::new();
        for service in &spec.services {
            let pick = reg.workers.iter().enumerate().position(|(i, w)| {
                w.session.is_none() && &w.service == service && !chosen.contains(&i)
            });
            match pick {
                Some(i) => chosen.push(i),
                None => missing.push(service.to_string()),
            }
        }
        if !missing.is_empty() {
            drop(reg);
            let msg = format!("no worker available for {}", missing.join(", "));
            outbox.push((tx.clone(), WireMessage::reject(msg)));
            return;
        }
        reg.next_session += 1;
        let session = format!("s{}", reg.next_session);
        let mut stages = Vec::with_capacity(chosen.len());
        for (&i, service) in chosen.iter().zip(&spec.services) {
            let worker = &mut reg.workers[i];
            worker.session = Some(session.clone());
            let conn = worker.conn;
            stages.push(conn);
            if let Some(c) = reg.conns.get(&conn) {
                let request = WireMessage {
                    service: Some(service.to_string()),
                    ..WireMessage::of_kind(MessageType::Request)
                }
                .with_session(&session);
                outbox.push((c.tx.clone(), request));
            }
        }
        log::info!("session {session}: {spec}");
        reg.sessions.insert(
            session.clone(),
            Session {
                client: id,
                stages,
                services: spec.services.clone(),
                last_seq: HashMap::new(),
                eos_from: HashSet::new(),
            },
        );
        drop(reg);
        let accept = WireMessage {
            cascade: Some(spec.names()),
            ..WireMessage::accept()
        }
        .with_session(&session);
        outbox.push((tx.clone(), accept));
    }

    fn route(&self, id: ConnId, tx: &SyncSender<String>, msg: WireMessage, outbox: &mut Outbox) {
        let session_id = msg.session.clone().unwrap_or_default();
        let mut reg = self.lock();
        let target = {
            let Some(session) = reg.sessions.get_mut(&session_id) else {
                drop(reg);
                let err = WireMessage::error(format!("unknown session {session_id:?}"));
                outbox.push((tx.clone(), err));
                return;
            };
            let next = if session.client == id {
                Some(session.stages[0])
            } else {
                session
                    .stages
                    .iter()
                    .position(|&c| c == id)
                    .map(|i| session.stages.get(i + 1).copied().unwrap_or(session.client))
            };
            let problem = match next {
                None => Some("not a member of session".to_string()),
                Some(_) if session.eos_from.contains(&id) => Some("message after eos".to_string()),
                Some(_) => match (msg.kind, msg.seq, session.last_seq.get(&id)) {
                    (MessageType::Data, Some(seq), Some(&last)) if seq <= last => {
                        Some(format!("seq {seq} does not increase past {last}"))
                    }
                    _ => None,
                },
            };
            if let Some(problem) = problem {
                drop(reg);
                let err = WireMessage::error(format!("{problem} {session_id:?}"))
                    .with_session(&session_id);
                outbox.push((tx.clone(), err));
                return;
            }
            if let Some(seq) = msg.seq {
                session.last_seq.insert(id, seq);
            }
            let target = next.expect("checked above");
            if msg.kind == MessageType::Eos {
                session.eos_from.insert(id);
            }
            target
        };
        let closes = msg.kind == MessageType::Eos && reg.sessions[&session_id].client == target;
        if let Some(c) = reg.conns.get(&target) {
            outbox.push((c.tx.clone(), msg));
        }
        if closes {
            log::info!("session {session_id} finished");
            release(&mut reg, &session_id);
        }
    }

    fn disconnect(&self, id: ConnId) {
        let mut outbox = Outbox::new();
        {
            let mut reg = self.lock();
            reg.conns.remove(&id);
            if let Some(pos) = reg.workers.iter().position(|w| w.conn == id) {
                let worker = reg.workers.remove(pos);
                if let Some(session) = worker.session {
                    let stage = stage_label(&reg, &session, id);
                    teardown(
                        &mut reg,
                        &session,
                        &format!("{stage} disconnected"),
                        id,
                        &mut outbox,
                    );
                }
            }
            let owned: Vec<String> = reg
                .sessions
                .iter()
                .filter(|(_, s)| s.client == id)
                .map(|(k, _)| k.clone())
                .collect();
            for session in owned {
                teardown(&mut reg, &session, "client disconnected", id, &mut outbox);
            }
        }
        self.deliver(outbox);
    }

    fn stats(&self) -> MediatorStats {
        let reg = self.lock();
        MediatorStats {
            workers: reg.workers.len(),
            idle_workers: reg.workers.iter().filter(|w| w.session.is_none()).count(),
            sessions: reg.sessions.len(),
            errors_sent: self.errors_sent.load(Ordering::Relaxed),
        }
    }
}

impl WireMessage {
    fn of_kind(kind: MessageType) -> Self {
        WireMessage {
            kind,
            ..WireMessage::default()
        }
    }
}

fn stage_label(reg: &Registry, session: &str, conn: ConnId) -> String {
    reg.sessions
        .get(session)
        .and_then(|s| {
            let i = s.stages.iter().position(|&c| c == conn)?;
            Some(format!("stage {} ({})", i + 1, s.services[i]))
        })
        .unwrap_or_else(|| "client".to_string())
}

fn release(reg: &mut Registry, session: &str) -> Option<Session> {
    let removed = reg.sessions.remove(session)?;
    for w in reg.workers.iter_mut() {
        if w.session.as_deref() == Some(session) {
            w.session = None;
        }
    }
    Some(removed)
}

/// Ends a session abnormally, notifying every remaining participant.
fn teardown(reg: &mut Registry, session: &str, reason: &str, origin: ConnId, outbox: &mut Outbox) {
    let Some(s) = release(reg, session) else {
        return;
    };
    log::warn!("session {session} torn down: {reason}");
    for conn in std::iter::once(s.client).chain(s.stages) {
        if conn == origin {
            continue;
        }
        if let Some(c) = reg.conns.get(&conn) {
            outbox.push((
                c.tx.clone(),
                WireMessage::error(reason).with_session(session),
            ));
        }
    }
}

/// Reads one line of at most `max` bytes. Longer lines are consumed and
/// reported as `Err(len)`.
fn read_bounded_line(
    reader: &mut impl BufRead,
    max: usize,
    buf: &mut Vec<u8>,
) -> io::Result<Option<std::result::Result<(), usize>>> {
    buf.clear();
    let n = reader
        .by_ref()
        .take(max as u64 + 1)
        .read_until(b'\n', buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.len() > max && buf.last() != Some(&b'\n') {
        let mut total = buf.len();
        loop {
            buf.clear();
            let n = reader.by_ref().take(64 * 1024).read_until(b'\n', buf)?;
            total += n;
            if n == 0 || buf.last() == Some(&b'\n') {
                break;
            }
        }
        return Ok(Some(Err(total)));
    }
    Ok(Some(Ok(())))
}

fn writer_loop(rx: Receiver<String>, stream: TcpStream) {
    let mut out = BufWriter::new(&stream);
    'outer: while let Ok(line) = rx.recv() {
        let mut next = Some(line);
        while let Some(line) = next {
            if out
                .write_all(line.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .is_err()
            {
                break 'outer;
            }
            next = rx.try_recv().ok();
        }
        if out.flush().is_err() {
            break;
        }
    }
    let _ = out.flush();
    drop(out);
    let _ = stream.shutdown(Shutdown::Both);
}

fn serve_connection(shared: Arc<Shared>, stream: TcpStream) {
    let id = shared.next_conn.fetch_add(1, Ordering::Relaxed) + 1;
    let peer = stream.peer_addr().ok();
    let (tx, rx) = sync_channel(shared.config.queue_capacity);
    let (write_half, registry_half) = match (stream.try_clone(), stream.try_clone()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return,
    };
    let writer = thread::spawn(move || writer_loop(rx, write_half));
    shared.lock().conns.insert(
        id,
        Conn {
            tx: tx.clone(),
            stream: registry_half,
        },
    );
    log::debug!("connection {id} from {peer:?}");

    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        match read_bounded_line(&mut reader, shared.config.max_line_bytes, &mut buf) {
            Ok(None) | Err(_) => break,
            Ok(Some(Err(len))) => {
                shared.deliver(vec![(
                    tx.clone(),
                    WireMessage::error(format!("line too long ({len} bytes)")),
                )]);
            }
            Ok(Some(Ok(()))) => {
                let flow = match std::str::from_utf8(&buf) {
                    Ok(line) => shared.handle_line(id, &tx, line),
                    Err(_) => {
                        shared.deliver(vec![(
                            tx.clone(),
                            WireMessage::error("line is not valid UTF-8"),
                        )]);
                        Flow::Continue
                    }
                };
                if let Flow::Close = flow {
                    break;
                }
            }
        }
    }
    log::debug!("connection {id} closed");
    shared.disconnect(id);
    drop(tx);
    let _ = writer.join();
}

/// A running mediator. Dropping the handle stops it.
pub struct MediatorHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl MediatorHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> MediatorStats {
        self.shared.stats()
    }

    /// Stops accepting and closes every connection.
    pub fn shutdown(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
        for conn in self.shared.lock().conns.values() {
            let _ = conn.stream.shutdown(Shutdown::Both);
        }
    }

    /// Blocks until the acceptor exits.
    pub fn wait(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MediatorHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.shutdown();
        }
    }
}

/// Binds and starts serving in background threads.
pub fn spawn(addr: impl ToSocketAddrs, config: MediatorConfig) -> Result<MediatorHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let shared = Arc::new(Shared {
        registry: Mutex::new(Registry::default()),
        next_conn: AtomicU64::new(0),
        errors_sent: AtomicU64::new(0),
        stopping: AtomicBool::new(false),
        config,
    });
    let acceptor_shared = Arc::clone(&shared);
    let acceptor = thread::Builder::new()
        .name("mediator-accept".into())
        .spawn(move || {
            for stream in listener.incoming() {
                if acceptor_shared.stopping.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(stream) => {
                        let _ = stream.set_nodelay(true);
                        let shared = Arc::clone(&acceptor_shared);
                        thread::spawn(move || serve_connection(shared, stream));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
    log::info!("mediator listening on {addr}");
    Ok(MediatorHandle {
        addr,
        shared,
        acceptor: Some(acceptor),
    })
}
