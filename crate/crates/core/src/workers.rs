//! Session handlers that run the simulated recognizer, the punctuator, the
//! simulated batch translator and the MT wrapper as mediator workers.
//!
//! In [`TimeMode::Virtual`] nothing waits on the wall clock: the recognizer
//! stamps updates with virtual times, the translator reports its drawn
//! latency instead of sleeping, and the wrapper replays the stream as a
//! discrete-event simulation. Runs are then reproducible bit for bit.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use crate::clock::{Clock, SimClock, WallClock};
use crate::error::{Error, Result};
use crate::mtwrapper::{
    drive, render_batch_log, render_emission_log, BatchRecord, BatchTranslator, EmissionRecord,
    TraceEvent, TranslationCache, Wrapper, WrapperConfig,
};
use crate::peer::{ClientSession, HandlerFactory, SessionHandler, SessionOutput};
use crate::protocol::{CascadeSpec, ServiceName, WireMessage};
use crate::punctuation::{Punctuated, Punctuator};
use crate::simworkers::{asr_run, AsrSimConfig, ConfusionTable, MtSimulator};
use crate::types::{HypothesisUpdate, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeMode {
    #[default]
    Virtual,
    Wall,
}

impl FromStr for TimeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "virtual" | "sim" => Ok(TimeMode::Virtual),
            "wall" | "real" => Ok(TimeMode::Wall),
            _ => Err(Error::Config(format!(
                "unknown time mode {s:?} (virtual, wall)"
            ))),
        }
    }
}

fn clock_for(mode: TimeMode) -> Arc<dyn Clock> {
    match mode {
        TimeMode::Virtual => Arc::new(SimClock::new()),
        TimeMode::Wall => Arc::new(WallClock::new()),
    }
}

fn join<T>(handle: JoinHandle<Result<T>>, what: &str) -> Result<T> {
    handle.join().map_err(|_| Error::Stage {
        stage: what.into(),
        message: "thread panicked".into(),
    })?
}

// ---- recognizer ----

/// Streams one document's transcript per session.
pub struct AsrSimFactory {
    pub transcript: Arc<Vec<Token>>,
    pub config: AsrSimConfig,
    pub confusion: Option<Arc<ConfusionTable>>,
    pub mode: TimeMode,
}

struct AsrSession {
    factory: AsrSimFactoryShared,
    cancel: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<usize>>>,
}

#[derive(Clone)]
struct AsrSimFactoryShared {
    transcript: Arc<Vec<Token>>,
    config: AsrSimConfig,
    confusion: Option<Arc<ConfusionTable>>,
    mode: TimeMode,
}

impl HandlerFactory for AsrSimFactory {
    fn create(&self, _session: &str) -> Result<Box<dyn SessionHandler>> {
        self.config.validate()?;
        Ok(Box::new(AsrSession {
            factory: AsrSimFactoryShared {
                transcript: Arc::clone(&self.transcript),
                config: self.config.clone(),
                confusion: self.confusion.clone(),
                mode: self.mode,
            },
            cancel: Arc::new(AtomicBool::new(false)),
            thread: None,
        }))
    }
}

impl SessionHandler for AsrSession {
    fn on_start(&mut self, out: &SessionOutput) -> Result<()> {
        let f = self.factory.clone();
        let out = out.clone();
        let cancel = Arc::clone(&self.cancel);
        self.thread = Some(thread::spawn(move || {
            let clock = clock_for(f.mode);
            asr_run(
                &f.transcript,
                &f.config,
                f.confusion.as_deref(),
                clock.as_ref(),
                out.session(),
                |u| {
                    let text = u.words().collect::<Vec<_>>().join(" ");
                    out.send(
                        WireMessage::data("", 0, text)
                            .with_stable_prefix(u.stable_prefix)
                            .with_ts(u.emitted_at_ms),
                    )
                    .map(drop)
                },
                || cancel.load(Ordering::Relaxed),
            )
        }));
        Ok(())
    }

    /// The recognizer ignores upstream data; its input is the document.
    fn on_data(&mut self, _msg: &WireMessage, _out: &SessionOutput) -> Result<()> {
        Ok(())
    }

    fn on_eos(&mut self, _out: &SessionOutput) -> Result<()> {
        match self.thread.take() {
            Some(t) => join(t, "asr").map(|n| log::info!("asr emitted {n} updates")),
            None => Ok(()),
        }
    }

    fn on_abort(&mut self, _reason: &str) {
        self.cancel.store(true, Ordering::Relaxed);
    }
}

// ---- punctuator ----

pub struct PunctFactory {
    pub punctuator: Arc<Punctuator>,
}

struct PunctSession {
    punctuator: Arc<Punctuator>,
    last_update: Option<HypothesisUpdate>,
    last_output: Option<Punctuated>,
    last_ts: u64,
}

impl HandlerFactory for PunctFactory {
    fn create(&self, _session: &str) -> Result<Box<dyn SessionHandler>> {
        Ok(Box::new(PunctSession {
            punctuator: Arc::clone(&self.punctuator),
            last_update: None,
            last_output: None,
            last_ts: 0,
        }))
    }
}

impl PunctSession {
    fn publish(
        &mut self,
        update: &HypothesisUpdate,
        is_final: bool,
        out: &SessionOutput,
    ) -> Result<()> {
        let p = self.punctuator.run(update, is_final);
        let unchanged = self
            .last_output
            .as_ref()
            .is_some_and(|prev| prev.text == p.text && prev.stable_chars == p.stable_chars);
        if !unchanged {
            out.send(
                WireMessage::data("", 0, p.text.clone())
                    .with_stable_prefix(p.stable_chars)
                    .with_ts(self.last_ts),
            )?;
            self.last_output = Some(p);
        }
        Ok(())
    }
}

impl SessionHandler for PunctSession {
    fn on_data(&mut self, msg: &WireMessage, out: &SessionOutput) -> Result<()> {
        let tokens = msg
            .text()
            .split_whitespace()
            .map(Token::new)
            .collect::<Result<Vec<_>>>()?;
        let stable_prefix = msg.stable_prefix.unwrap_or(0).min(tokens.len());
        let update = HypothesisUpdate {
            session_id: out.session().to_string(),
            seq: msg.seq.unwrap_or(0),
            tokens,
            stable_prefix,
            emitted_at_ms: msg.ts_ms.unwrap_or(self.last_ts),
        };
        self.last_ts = update.emitted_at_ms;
        self.publish(&update, false, out)?;
        self.last_update = Some(update);
        Ok(())
    }

    fn on_eos(&mut self, out: &SessionOutput) -> Result<()> {
        if let Some(update) = self.last_update.take() {
            self.publish(&update, true, out)?;
        }
        Ok(())
    }
}

// ---- batch translator ----

/// Serves `mtbatch` sessions: each data message holds newline-separated
/// segments and is answered with their translations.
pub struct MtSimFactory {
    pub simulator: MtSimulator,
    pub mode: TimeMode,
}

struct MtSession {
    simulator: MtSimulator,
    clock: Arc<dyn Clock>,
}

impl HandlerFactory for MtSimFactory {
    fn create(&self, _session: &str) -> Result<Box<dyn SessionHandler>> {
        let mut simulator = self.simulator.clone();
        simulator.reset();
        Ok(Box::new(MtSession {
            simulator,
            clock: clock_for(self.mode),
        }))
    }
}

impl SessionHandler for MtSession {
    fn on_data(&mut self, msg: &WireMessage, out: &SessionOutput) -> Result<()> {
        let segments: Vec<String> = msg.text().split('\n').map(str::to_string).collect();
        let (translations, elapsed) = self.simulator.translate(&segments)?;
        let elapsed = elapsed.round() as u64;
        self.clock.sleep_ms(elapsed);
        out.send(WireMessage {
            elapsed_ms: Some(elapsed),
            ..WireMessage::data("", 0, translations.join("\n"))
        })?;
        Ok(())
    }
}

// ---- wrapper ----

/// A [`BatchTranslator`] backed by an `mtbatch` session on the mediator.
pub struct RemoteTranslator {
    session: ClientSession,
    clock: Arc<dyn Clock>,
    mode: TimeMode,
}

impl RemoteTranslator {
    pub fn open(mediator: SocketAddr, service: &ServiceName, mode: TimeMode) -> Result<Self> {
        let spec = CascadeSpec::new(vec![service.clone()])?;
        Ok(RemoteTranslator {
            session: ClientSession::open(mediator, &spec)?,
            clock: Arc::new(WallClock::new()),
            mode,
        })
    }

    pub fn close(mut self) -> Result<()> {
        self.session.send_eos()?;
        while self.session.recv_data()?.is_some() {}
        self.session.close();
        Ok(())
    }
}

impl BatchTranslator for RemoteTranslator {
    fn translate(&mut self, segments: &[String]) -> Result<(Vec<String>, u64)> {
        if segments.iter().any(|s| s.contains('\n')) {
            return Err(Error::Mt("segments may not contain newlines".into()));
        }
        let start = self.clock.now_ms();
        self.session.send_text(&segments.join("\n"))?;
        let reply = self
            .session
            .recv_data()?
            .ok_or_else(|| Error::Mt("translator ended the session".into()))?;
        let out: Vec<String> = reply.text().split('\n').map(str::to_string).collect();
        if out.len() != segments.len() {
            return Err(Error::Mt(format!(
                "sent {} segments, got {}",
                segments.len(),
                out.len()
            )));
        }
        let elapsed = match self.mode {
            TimeMode::Virtual => reply.elapsed_ms.unwrap_or(0),
            TimeMode::Wall => self.clock.now_ms() - start,
        };
        Ok((out, elapsed))
    }
}

/// Where a finished wrapper session leaves its records.
#[derive(Debug, Clone, Default)]
pub struct WrapperReport {
    pub emissions: Vec<EmissionRecord>,
    pub batches: Vec<BatchRecord>,
    pub cache_hits: u64,
    pub mt_segments: u64,
    /// Source sentences as they stood at the end of the session.
    pub final_sources: Vec<String>,
}

impl WrapperReport {
    fn from_wrapper(wrapper: &Wrapper, emissions: Vec<EmissionRecord>) -> Self {
        WrapperReport {
            emissions,
            batches: wrapper.batches.clone(),
            cache_hits: wrapper.cache.hits,
            mt_segments: wrapper.mt_segments,
            final_sources: wrapper
                .buffer
                .sentences()
                .into_iter()
                .map(|s| s.text)
                .collect(),
        }
    }
}

pub struct WrapperFactory {
    pub mediator: SocketAddr,
    /// The `mtbatch` service to translate with.
    pub mt_service: ServiceName,
    pub config: WrapperConfig,
    pub language: String,
    pub mode: TimeMode,
    /// Emission log path; the batch timings go next to it.
    pub log: Option<PathBuf>,
    /// Receives each finished session's records.
    pub reports: Option<Sender<WrapperReport>>,
    /// Translations every session's cache starts with.
    pub preload: Option<Arc<TranslationCache>>,
}

impl WrapperFactory {
    fn new_wrapper(&self) -> Wrapper {
        let mut wrapper = Wrapper::new(self.config, &self.language);
        if let Some(cache) = &self.preload {
            wrapper.cache = TranslationCache::clone(cache);
        }
        wrapper
    }

    fn finish(&self, report: WrapperReport) -> Result<()> {
        if let Some(path) = &self.log {
            std::fs::write(path, render_emission_log(&report.emissions))?;
            std::fs::write(batch_log_path(path), render_batch_log(&report.batches))?;
        }
        if let Some(tx) = &self.reports {
            let _ = tx.send(report);
        }
        Ok(())
    }
}

/// `emissions.tsv` -> `emissions.batches.tsv`.
pub fn batch_log_path(log: &std::path::Path) -> PathBuf {
    let stem = log
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    log.with_file_name(format!("{stem}.batches.tsv"))
}

enum WrapperMode {
    Virtual {
        events: Option<Sender<TraceEvent>>,
    },
    Wall {
        shared: Arc<(Mutex<WallState>, Condvar)>,
        clock: Arc<dyn Clock>,
    },
}

struct WallState {
    wrapper: Wrapper,
    ended: bool,
}

struct WrapperSession {
    factory: Arc<WrapperFactory>,
    mode: WrapperMode,
    thread: Option<JoinHandle<Result<(WrapperReport, RemoteTranslator)>>>,
}

/// Shares one factory configuration across sessions.
pub struct SharedWrapperFactory(pub Arc<WrapperFactory>);

impl HandlerFactory for SharedWrapperFactory {
    fn create(&self, _session: &str) -> Result<Box<dyn SessionHandler>> {
        let f = &self.0;
        let mode = match f.mode {
            TimeMode::Virtual => WrapperMode::Virtual { events: None },
            TimeMode::Wall => WrapperMode::Wall {
                shared: Arc::new((
                    Mutex::new(WallState {
                        wrapper: f.new_wrapper(),
                        ended: false,
                    }),
                    Condvar::new(),
                )),
                clock: Arc::new(WallClock::new()),
            },
        };
        Ok(Box::new(WrapperSession {
            factory: Arc::clone(f),
            mode,
            thread: None,
        }))
    }
}

fn emission_message(e: &EmissionRecord) -> WireMessage {
    WireMessage {
        index: Some(e.index),
        version: Some(e.version),
        ..WireMessage::data("", 0, e.text.clone()).with_ts(e.emit_ms)
    }
}

fn run_virtual(
    f: &WrapperFactory,
    mut mt: RemoteTranslator,
    events: Receiver<TraceEvent>,
    out: SessionOutput,
) -> Result<(WrapperReport, RemoteTranslator)> {
    let mut wrapper = f.new_wrapper();
    let mut emissions = Vec::new();
    drive(
        &mut wrapper,
        &mut mt,
        || events.recv().ok(),
        |e| {
            out.send(emission_message(e))?;
            emissions.push(e.clone());
            Ok(())
        },
    )?;
    Ok((WrapperReport::from_wrapper(&wrapper, emissions), mt))
}

fn run_wall(
    shared: &(Mutex<WallState>, Condvar),
    clock: &dyn Clock,
    mut mt: RemoteTranslator,
    out: SessionOutput,
) -> Result<(WrapperReport, RemoteTranslator)> {
    let (lock, cvar) = shared;
    let start = clock.now_ms();
    let now = || clock.now_ms() - start;
    let mut emissions = Vec::new();
    let mut finalized = false;
    let emit = |e: &EmissionRecord, emissions: &mut Vec<EmissionRecord>| -> Result<()> {
        out.send(emission_message(e))?;
        emissions.push(e.clone());
        Ok(())
    };
    loop {
        let it = {
            let mut st = lock.lock().unwrap_or_else(|e| e.into_inner());
            while !st.wrapper.has_work() && !st.ended {
                st = cvar.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            if !st.wrapper.has_work() {
                if finalized {
                    break;
                }
                finalized = true;
                st.wrapper.finalize();
                continue;
            }
            st.wrapper.begin_iteration(now())
        };
        for e in &it.emissions {
            emit(e, &mut emissions)?;
        }
        if let Some(batch) = it.batch {
            let result = mt.translate(&batch.sources());
            let mut st = lock.lock().unwrap_or_else(|e| e.into_inner());
            let (translations, _) = match result {
                Ok(r) => r,
                Err(e) => {
                    st.wrapper.abort_batch(&batch);
                    return Err(e);
                }
            };
            let records = st.wrapper.finish_batch(batch, translations, now())?;
            drop(st);
            for e in &records {
                emit(e, &mut emissions)?;
            }
        }
    }
    let st = lock.lock().unwrap_or_else(|e| e.into_inner());
    Ok((WrapperReport::from_wrapper(&st.wrapper, emissions), mt))
}

impl SessionHandler for WrapperSession {
    fn on_start(&mut self, out: &SessionOutput) -> Result<()> {
        let f = Arc::clone(&self.factory);
        let mt = RemoteTranslator::open(f.mediator, &f.mt_service, f.mode).map_err(|e| {
            Error::Stage {
                stage: f.mt_service.to_string(),
                message: e.to_string(),
            }
        })?;
        let out = out.clone();
        self.thread = Some(match &mut self.mode {
            WrapperMode::Virtual { events } => {
                let (tx, rx) = channel();
                *events = Some(tx);
                thread::spawn(move || run_virtual(&f, mt, rx, out))
            }
            WrapperMode::Wall { shared, clock } => {
                let shared = Arc::clone(shared);
                let clock = Arc::clone(clock);
                thread::spawn(move || run_wall(&shared, clock.as_ref(), mt, out))
            }
        });
        Ok(())
    }

    /// Never waits for translation: updates go to the buffer or queue.
    fn on_data(&mut self, msg: &WireMessage, _out: &SessionOutput) -> Result<()> {
        let stable = msg.stable_prefix.unwrap_or(0);
        match &self.mode {
            WrapperMode::Virtual { events } => {
                if let Some(tx) = events {
                    let _ = tx.send(TraceEvent {
                        ts_ms: msg.ts_ms.unwrap_or(0),
                        text: msg.text().to_string(),
                        stable_chars: stable,
                    });
                }
            }
            WrapperMode::Wall { shared, .. } => {
                let (lock, cvar) = &**shared;
                lock.lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .wrapper
                    .ingest_text(msg.text(), stable);
                cvar.notify_one();
            }
        }
        Ok(())
    }

    fn on_eos(&mut self, _out: &SessionOutput) -> Result<()> {
        match &mut self.mode {
            WrapperMode::Virtual { events } => drop(events.take()),
            WrapperMode::Wall { shared, .. } => {
                let (lock, cvar) = &**shared;
                lock.lock().unwrap_or_else(|e| e.into_inner()).ended = true;
                cvar.notify_one();
            }
        }
        let Some(thread) = self.thread.take() else {
            return Ok(());
        };
        let (report, mt) = join(thread, "mtwrapper")?;
        mt.close()?;
        self.factory.finish(report)
    }

    fn on_abort(&mut self, _reason: &str) {
        match &mut self.mode {
            WrapperMode::Virtual { events } => drop(events.take()),
            WrapperMode::Wall { shared, .. } => {
                let (lock, cvar) = &**shared;
                lock.lock().unwrap_or_else(|e| e.into_inner()).ended = true;
                cvar.notify_one();
            }
        }
    }
}
