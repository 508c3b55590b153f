use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use slt_core::mediator::{spawn, MediatorConfig, MediatorHandle};
use slt_core::peer::{connect, ClientSession, SessionHandler, SessionOutput, WorkerConn};
use slt_core::protocol::{CascadeSpec, MessageType, ServiceName, WireMessage};
use slt_core::{Error, Result};

fn mediator() -> MediatorHandle {
    spawn("127.0.0.1:0", MediatorConfig::default()).unwrap()
}

fn wait_for(cond: impl Fn() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < Duration::from_secs(5), "timed out");
        thread::sleep(Duration::from_millis(5));
    }
}

/// Uppercases data and records lifecycle events.
struct Echo {
    name: &'static str,
    log: Arc<Mutex<Vec<String>>>,
}

impl SessionHandler for Echo {
    fn on_data(&mut self, msg: &WireMessage, out: &SessionOutput) -> Result<()> {
        out.send(WireMessage {
            text: Some(msg.text().to_uppercase()),
            ..WireMessage::default()
        })?;
        Ok(())
    }

    fn on_eos(&mut self, _out: &SessionOutput) -> Result<()> {
        self.log.lock().unwrap().push(format!("eos {}", self.name));
        Ok(())
    }
}

fn echo_worker(
    med: &MediatorHandle,
    service: &str,
    name: &'static str,
    log: Arc<Mutex<Vec<String>>>,
) -> thread::JoinHandle<()> {
    let conn = WorkerConn::register(med.local_addr(), &service.parse().unwrap()).unwrap();
    thread::spawn(move || {
        let factory = move |_: &str| -> Result<Box<dyn SessionHandler>> {
            Ok(Box::new(Echo {
                name,
                log: Arc::clone(&log),
            }))
        };
        let _ = conn.run(&factory);
    })
}

fn cascade(names: &[&str]) -> CascadeSpec {
    CascadeSpec::parse(names).unwrap()
}

#[test]
fn offer_registers_and_malformed_offer_closes() {
    let med = mediator();
    let (w, mut r) = connect(med.local_addr()).unwrap();
    w.send(&WireMessage::offer(&"asr:en".parse().unwrap()))
        .unwrap();
    let reply = r.recv().unwrap().unwrap();
    assert_eq!(reply.kind, MessageType::Accept);
    assert_eq!(reply.service.as_deref(), Some("asr:en"));

    let (w2, mut r2) = connect(med.local_addr()).unwrap();
    w2.send_raw(r#"{"type":"offer","service":"mt:en"}"#)
        .unwrap();
    let reply = r2.recv().unwrap().unwrap();
    assert_eq!(reply.kind, MessageType::Error);
    assert!(reply.message.unwrap().contains("malformed service"));
    assert!(
        r2.recv().unwrap().is_none(),
        "connection closed after a malformed offer"
    );
    wait_for(|| med.stats().workers == 1);
}

#[test]
fn single_stage_echo_and_eos() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _w = echo_worker(&med, "mt:en-cs", "a", Arc::clone(&log));
    let mut client = ClientSession::open(med.local_addr(), &cascade(&["mt:en-cs"])).unwrap();
    assert_eq!(client.session, "s1");
    client.send_text("hello").unwrap();
    let got = client.recv_data().unwrap().unwrap();
    assert_eq!(got.text(), "HELLO");
    assert_eq!(got.seq, Some(1));
    client.send_eos().unwrap();
    assert!(client.recv_data().unwrap().is_none());
    assert_eq!(*log.lock().unwrap(), vec!["eos a"]);
    wait_for(|| med.stats().sessions == 0 && med.stats().idle_workers == 1);
}

#[test]
fn three_stage_cascade_preserves_order_and_eos() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _a = echo_worker(&med, "asr:en", "asr", Arc::clone(&log));
    let _p = echo_worker(&med, "punct:en", "punct", Arc::clone(&log));
    let _m = echo_worker(&med, "mt:en-cs", "mt", Arc::clone(&log));
    let mut client = ClientSession::open(
        med.local_addr(),
        &cascade(&["asr:en", "punct:en", "mt:en-cs"]),
    )
    .unwrap();
    let texts: Vec<String> = (0..200).map(|i| format!("message {i}")).collect();
    for t in &texts {
        client.send_text(t).unwrap();
    }
    client.send_eos().unwrap();
    let mut got = Vec::new();
    while let Some(msg) = client.recv_data().unwrap() {
        got.push(msg.text().to_string());
    }
    let want: Vec<String> = texts.iter().map(|t| t.to_uppercase()).collect();
    assert_eq!(got, want);
    assert_eq!(*log.lock().unwrap(), vec!["eos asr", "eos punct", "eos mt"]);
}

#[test]
fn rejects_missing_and_incompatible() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _a = echo_worker(&med, "asr:en", "asr", Arc::clone(&log));
    match ClientSession::open(med.local_addr(), &cascade(&["asr:en", "mt:en-de"])) {
        Err(Error::Rejected(m)) => assert!(m.contains("mt:en-de"), "{m}"),
        other => panic!("expected rejection, got {:?}", other.err()),
    }
    let (w, mut r) = connect(med.local_addr()).unwrap();
    w.send_raw(r#"{"type":"request","cascade":["mt:en-cs","punct:en"]}"#)
        .unwrap();
    let reply = r.recv().unwrap().unwrap();
    assert_eq!(reply.kind, MessageType::Reject);
    assert_eq!(reply.message.as_deref(), Some("incompatible cascade"));
    // The failed request reserved nothing.
    assert_eq!(med.stats().idle_workers, 1);
}

#[test]
fn selection_prefers_idle_worker_in_registration_order() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _w1 = echo_worker(&med, "mt:en-cs", "first", Arc::clone(&log));
    let _w2 = echo_worker(&med, "mt:en-cs", "second", Arc::clone(&log));
    let spec = cascade(&["mt:en-cs"]);
    let mut c1 = ClientSession::open(med.local_addr(), &spec).unwrap();
    let mut c2 = ClientSession::open(med.local_addr(), &spec).unwrap();
    assert_eq!(med.stats().idle_workers, 0);
    assert!(matches!(
        ClientSession::open(med.local_addr(), &spec),
        Err(Error::Rejected(_))
    ));
    c2.send_eos().unwrap();
    assert!(c2.recv_data().unwrap().is_none());
    c1.send_eos().unwrap();
    assert!(c1.recv_data().unwrap().is_none());
    assert_eq!(*log.lock().unwrap(), vec!["eos second", "eos first"]);
    wait_for(|| med.stats().idle_workers == 2);
}

#[test]
fn seq_must_increase_and_unknown_session_errors() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _w = echo_worker(&med, "mt:en-cs", "a", log);
    let client = ClientSession::open(med.local_addr(), &cascade(&["mt:en-cs"])).unwrap();
    let session = client.session.clone();
    let w = client.writer();
    let mut client = client;
    w.send(&WireMessage::data(&session, 5, "x")).unwrap();
    assert_eq!(client.recv().unwrap().unwrap().text(), "X");
    w.send(&WireMessage::data(&session, 5, "y")).unwrap();
    let err = client.recv().unwrap().unwrap();
    assert_eq!(err.kind, MessageType::Error);
    assert!(err.message.unwrap().contains("seq"));
    w.send(&WireMessage::data("s99", 1, "z")).unwrap();
    let err = client.recv().unwrap().unwrap();
    assert!(err.message.unwrap().contains("unknown session"));
    w.send(&WireMessage::data(&session, 6, "ok")).unwrap();
    assert_eq!(client.recv().unwrap().unwrap().text(), "OK");
}

#[test]
fn worker_disconnect_tears_down_session() {
    let med = mediator();
    let log = Arc::new(Mutex::new(Vec::new()));
    let _a = echo_worker(&med, "asr:en", "asr", Arc::clone(&log));
    let doomed =
        WorkerConn::register(med.local_addr(), &ServiceName::punct("en").unwrap()).unwrap();
    let mut client =
        ClientSession::open(med.local_addr(), &cascade(&["asr:en", "punct:en"])).unwrap();
    doomed.writer().close();
    let err = client.recv().unwrap().unwrap();
    assert_eq!(err.kind, MessageType::Error);
    let message = err.message.unwrap();
    assert!(message.contains("punct:en"), "{message}");
    wait_for(|| {
        let s = med.stats();
        s.sessions == 0 && s.workers == 1 && s.idle_workers == 1
    });
}
