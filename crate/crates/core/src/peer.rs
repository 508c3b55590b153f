//! Client and worker ends of the mediator protocol.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::protocol::{CascadeSpec, MessageType, ServiceName, WireMessage};

/// Shared, line-buffered sending half of a connection.
#[derive(Clone)]
pub struct LinkWriter {
    inner: Arc<Mutex<BufWriter<TcpStream>>>,
}

impl LinkWriter {
    pub fn send(&self, msg: &WireMessage) -> Result<()> {
        self.send_raw(&msg.to_line())
    }

    /// Sends an arbitrary line; used to exercise error handling.
    pub fn send_raw(&self, line: &str) -> Result<()> {
        let mut w = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn close(&self) {
        let w = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let _ = w.get_ref().shutdown(Shutdown::Both);
    }
}

pub struct LinkReader {
    inner: BufReader<TcpStream>,
    line: String,
}

impl LinkReader {
    /// Next message, or `None` once the peer closed the connection.
    pub fn recv(&mut self) -> Result<Option<WireMessage>> {
        self.line.clear();
        if self.inner.read_line(&mut self.line)? == 0 {
            return Ok(None);
        }
        WireMessage::decode(&self.line).map(Some)
    }
}

pub fn connect(addr: impl ToSocketAddrs) -> Result<(LinkWriter, LinkReader)> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let reader = LinkReader {
        inner: BufReader::new(stream.try_clone()?),
        line: String::new(),
    };
    let writer = LinkWriter {
        inner: Arc::new(Mutex::new(BufWriter::new(stream))),
    };
    Ok((writer, reader))
}

fn unexpected(msg: &WireMessage) -> Error {
    match msg.kind {
        MessageType::Reject => Error::Rejected(msg.message.clone().unwrap_or_default()),
        _ => Error::Protocol(format!(
            "unexpected {} message: {}",
            msg.kind.as_str(),
            msg.message.as_deref().unwrap_or_default()
        )),
    }
}

/// A client's view of one open cascade.
pub struct ClientSession {
    pub session: String,
    writer: LinkWriter,
    reader: LinkReader,
    next_seq: u64,
}

impl ClientSession {
    pub fn open(addr: impl ToSocketAddrs, cascade: &CascadeSpec) -> Result<Self> {
        let (writer, mut reader) = connect(addr)?;
        writer.send(&WireMessage::request(cascade))?;
        let reply = reader
            .recv()?
            .ok_or_else(|| Error::Protocol("mediator closed the connection".into()))?;
        match (reply.kind, reply.session.clone()) {
            (MessageType::Accept, Some(session)) => Ok(ClientSession {
                session,
                writer,
                reader,
                next_seq: 1,
            }),
            _ => Err(unexpected(&reply)),
        }
    }

    /// Sends a data message, filling in session and seq. Returns the seq.
    pub fn send(&mut self, mut msg: WireMessage) -> Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        msg.kind = MessageType::Data;
        msg.session = Some(self.session.clone());
        msg.seq = Some(seq);
        self.writer.send(&msg)?;
        Ok(seq)
    }

    pub fn send_text(&mut self, text: &str) -> Result<u64> {
        self.send(WireMessage {
            text: Some(text.to_string()),
            ..WireMessage::default()
        })
    }

    pub fn send_eos(&mut self) -> Result<()> {
        self.writer.send(&WireMessage::eos(&self.session))
    }

    pub fn recv(&mut self) -> Result<Option<WireMessage>> {
        self.reader.recv()
    }

    /// Receives the next data message; eos yields `None`, errors fail.
    pub fn recv_data(&mut self) -> Result<Option<WireMessage>> {
        loop {
            let Some(msg) = self.recv()? else {
                return Err(Error::Protocol("mediator closed the connection".into()));
            };
            match msg.kind {
                MessageType::Data => return Ok(Some(msg)),
                MessageType::Eos => return Ok(None),
                MessageType::Error => {
                    return Err(Error::Stage {
                        stage: msg.session.clone().unwrap_or_default(),
                        message: msg.message.unwrap_or_default(),
                    })
                }
                _ => log::debug!("ignoring {} message", msg.kind.as_str()),
            }
        }
    }

    pub fn writer(&self) -> LinkWriter {
        self.writer.clone()
    }

    pub fn close(self) {
        self.writer.close();
    }
}

/// Where a session handler sends its output.
#[derive(Clone)]
pub struct SessionOutput {
    session: Arc<str>,
    writer: LinkWriter,
    seq: Arc<AtomicU64>,
}

impl SessionOutput {
    pub fn session(&self) -> &str {
        &self.session
    }

    /// Sends `msg` as the next data message of this session.
    pub fn send(&self, mut msg: WireMessage) -> Result<u64> {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        msg.kind = MessageType::Data;
        msg.session = Some(self.session.to_string());
        msg.seq = Some(seq);
        self.writer.send(&msg)?;
        Ok(seq)
    }
}

/// Per-session behaviour of a worker. Calls arrive in protocol order on
/// one thread; a handler may spawn its own activities.
pub trait SessionHandler: Send {
    fn on_start(&mut self, _out: &SessionOutput) -> Result<()> {
        Ok(())
    }

    fn on_data(&mut self, msg: &WireMessage, out: &SessionOutput) -> Result<()>;

    /// The upstream ended. Emit any remaining output before returning; the
    /// runtime then forwards eos.
    fn on_eos(&mut self, _out: &SessionOutput) -> Result<()> {
        Ok(())
    }

    /// The session was torn down elsewhere.
    fn on_abort(&mut self, _reason: &str) {}
}

pub trait HandlerFactory: Send + Sync {
    fn create(&self, session: &str) -> Result<Box<dyn SessionHandler>>;
}

impl<F> HandlerFactory for F
where
    F: Fn(&str) -> Result<Box<dyn SessionHandler>> + Send + Sync,
{
    fn create(&self, session: &str) -> Result<Box<dyn SessionHandler>> {
        self(session)
    }
}

/// A registered worker connection.
pub struct WorkerConn {
    pub service: ServiceName,
    writer: LinkWriter,
    reader: LinkReader,
}

impl WorkerConn {
    /// Connects and offers `service`, waiting for the mediator's accept.
    pub fn register(addr: impl ToSocketAddrs, service: &ServiceName) -> Result<Self> {
        let (writer, mut reader) = connect(addr)?;
        writer.send(&WireMessage::offer(service))?;
        let reply = reader
            .recv()?
            .ok_or_else(|| Error::Protocol("mediator closed the connection".into()))?;
        if reply.kind != MessageType::Accept {
            return Err(unexpected(&reply));
        }
        log::info!("registered as {service}");
        Ok(WorkerConn {
            service: service.clone(),
            writer,
            reader,
        })
    }

    pub fn writer(&self) -> LinkWriter {
        self.writer.clone()
    }

    /// Serves sessions until the mediator closes the connection.
    pub fn run(mut self, factory: &dyn HandlerFactory) -> Result<()> {
        let mut active: Option<(Box<dyn SessionHandler>, SessionOutput)> = None;
        while let Some(msg) = self.reader.recv()? {
            let for_active = match (&active, msg.session()) {
                (Some((_, out)), Some(s)) => out.session() == s,
                _ => false,
            };
            match msg.kind {
                MessageType::Request => {
                    let Some(session) = msg.session.clone() else {
                        continue;
                    };
                    if let Some((mut old, _)) = active.take() {
                        old.on_abort("replaced by a new session");
                    }
                    let out = SessionOutput {
                        session: session.as_str().into(),
                        writer: self.writer.clone(),
                        seq: Arc::new(AtomicU64::new(0)),
                    };
                    let started = factory.create(&session).and_then(|mut h| {
                        h.on_start(&out)?;
                        Ok(h)
                    });
                    match started {
                        Ok(h) => active = Some((h, out)),
                        Err(e) => self.fail(&session, &e)?,
                    }
                }
                MessageType::Data if for_active => {
                    let (h, out) = active.as_mut().expect("checked");
                    if let Err(e) = h.on_data(&msg, out) {
                        let session = out.session().to_string();
                        active = None;
                        self.fail(&session, &e)?;
                    }
                }
                MessageType::Eos if for_active => {
                    let (mut h, out) = active.take().expect("checked");
                    match h.on_eos(&out) {
                        Ok(()) => self.writer.send(&WireMessage::eos(out.session()))?,
                        Err(e) => self.fail(out.session(), &e)?,
                    }
                }
                MessageType::Error if for_active => {
                    let (mut h, _) = active.take().expect("checked");
                    h.on_abort(msg.message.as_deref().unwrap_or_default());
                }
                _ => log::debug!("{}: ignoring {}", self.service, msg.to_line()),
            }
        }
        if let Some((mut h, _)) = active {
            h.on_abort("mediator connection closed");
        }
        Ok(())
    }

    fn fail(&self, session: &str, e: &Error) -> Result<()> {
        log::error!("{} session {session}: {e}", self.service);
        self.writer
            .send(&WireMessage::error(e.to_string()).with_session(session))
    }
}
