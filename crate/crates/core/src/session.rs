//! End-to-end runs: recognizer, punctuator and wrapper (with its batch
//! translator) registered as workers, and one client session driving a
//! document through the cascade. All traffic crosses the mediator.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc::channel;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crate::error::{Error, Result};
use crate::eval::{latency_stats, LatencyStats};
use crate::fixture::{load_document, parse_key_values};
use crate::mediator::{self, MediatorConfig, MediatorHandle};
use crate::mtwrapper::{
    expected_delay, render_emission_log, EmissionRecord, TranslationCache, WrapperConfig,
};
use crate::peer::{ClientSession, HandlerFactory, LinkWriter, WorkerConn};
use crate::protocol::{CascadeSpec, ServiceKind, ServiceName};
use crate::punctuation::{CountModel, Punctuator, TruecaseModel};
use crate::simworkers::{
    AsrSimConfig, ConfusionTable, Dictionary, MtSimConfig, MtSimulator, MtTransform,
};
use crate::types::Document;
use crate::workers::{
    batch_log_path, AsrSimFactory, MtSimFactory, PunctFactory, SharedWrapperFactory, TimeMode,
    WrapperFactory, WrapperReport,
};

pub const EMISSIONS_FILE: &str = "emissions.tsv";
pub const LATENCY_FILE: &str = "latency.tsv";
pub const TIMING_FILE: &str = "timing.txt";
/// Label of the simulated translator in `latency.tsv`.
pub const MT_SIM_LABEL: &str = "mt-sim";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRunConfig {
    pub doc_dir: PathBuf,
    pub out_dir: PathBuf,
    pub target_lang: String,
    /// Defaults to `asr:<src>,punct:<src>,mt:<src>-<tgt>`.
    pub cascade: Option<CascadeSpec>,
    pub asr: AsrSimConfig,
    pub confusion: Option<PathBuf>,
    pub punct_model: Option<PathBuf>,
    pub truecase_model: Option<PathBuf>,
    pub mt: MtSimConfig,
    pub wrapper: WrapperConfig,
    /// `source<TAB>translation` lines preloaded into the wrapper cache.
    pub cache_import: Option<PathBuf>,
    /// Seeds both the recognizer noise and the translator jitter.
    pub seed: u64,
    pub mode: TimeMode,
    /// An external mediator; `None` spawns one in-process.
    pub mediator: Option<SocketAddr>,
}

impl Default for SessionRunConfig {
    fn default() -> Self {
        SessionRunConfig {
            doc_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            target_lang: "cs".into(),
            cascade: None,
            asr: AsrSimConfig::default(),
            confusion: None,
            punct_model: None,
            truecase_model: None,
            mt: MtSimConfig::default(),
            wrapper: WrapperConfig::default(),
            cache_import: None,
            seed: 0,
            mode: TimeMode::Virtual,
            mediator: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "bad value {value:?} for {key} (on, off)"
        ))),
    }
}

impl SessionRunConfig {
    /// Sets one `key=value` setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        match key {
            "doc" => self.doc_dir = path(),
            "out" => self.out_dir = path(),
            "target_lang" => self.target_lang = value.to_string(),
            "cascade" => {
                let names: Vec<&str> = value.split(',').map(str::trim).collect();
                self.cascade =
                    Some(CascadeSpec::parse(&names).map_err(|e| Error::Config(e.to_string()))?);
            }
            "seed" => self.seed = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "mediator" => self.mediator = Some(parse_value(key, value)?),
            "asr.tick_ms" => self.asr.tick_ms = parse_value(key, value)?,
            "asr.window_ms" => self.asr.window_ms = parse_value(key, value)?,
            "asr.p_sub" | "asr.p_substitute" => self.asr.p_substitute = parse_value(key, value)?,
            "asr.speedup" => self.asr.speedup = parse_value(key, value)?,
            "asr.confusion" => self.confusion = Some(path()),
            "punct.model" => self.punct_model = Some(path()),
            "punct.truecase" => self.truecase_model = Some(path()),
            "mt.base_ms" => self.mt.base_ms = parse_value(key, value)?,
            "mt.per_token_ms" => self.mt.per_token_ms = parse_value(key, value)?,
            "mt.jitter_std_ms" => self.mt.jitter_std_ms = parse_value(key, value)?,
            "mt.transform" => self.mt.transform = value.parse()?,
            "mt.dict" => self.mt.dict_path = Some(path()),
            "wrapper.mask_k" => self.wrapper.mask_k = parse_value(key, value)?,
            "wrapper.stability" => self.wrapper.stability_level = value.parse()?,
            "wrapper.cache" => self.wrapper.cache_enabled = parse_switch(key, value)?,
            "wrapper.cache_import" => self.cache_import = Some(path()),
            _ => return Err(Error::Config(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Reads a flat `key=value` file with section prefixes.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = SessionRunConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (key, value) in parse_key_values(&text, path)? {
            self.set(&key, &value, base)?;
        }
        Ok(())
    }

    fn cascade_for(&self, doc: &Document) -> Result<CascadeSpec> {
        let cascade = match &self.cascade {
            Some(c) => c.clone(),
            None => CascadeSpec::new(vec![
                ServiceName::asr(&doc.source_lang)?,
                ServiceName::punct(&doc.source_lang)?,
                ServiceName::mt(&doc.source_lang, &self.target_lang)?,
            ])?,
        };
        let names = &cascade.services;
        let first_asr = names.first().is_some_and(|s| s.kind == ServiceKind::Asr);
        let last_mt = names.last().is_some_and(|s| s.kind == ServiceKind::Mt);
        let mts = names.iter().filter(|s| s.kind == ServiceKind::Mt).count();
        if !first_asr || !last_mt || mts != 1 {
            return Err(Error::Config(format!(
                "cascade {cascade} must start with asr and end with its only mt stage"
            )));
        }
        if names[0].source_lang != doc.source_lang {
            return Err(Error::Config(format!(
                "cascade starts with {} but the document is in {}",
                names[0], doc.source_lang
            )));
        }
        Ok(cascade)
    }
}

fn stage_err(stage: impl std::fmt::Display, e: impl std::fmt::Display) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct SessionSummary {
    pub out_dir: PathBuf,
    pub cascade: CascadeSpec,
    /// Emissions as received by the client.
    pub received: Vec<EmissionRecord>,
    /// Final translation per sentence, in order.
    pub translations: Vec<String>,
    /// The wrapper's final source sentences.
    pub sources: Vec<String>,
    pub report: WrapperReport,
    pub latency: Option<LatencyStats>,
}

struct RunningWorker {
    writer: LinkWriter,
    thread: JoinHandle<Result<()>>,
}

fn start_worker(
    addr: SocketAddr,
    service: &ServiceName,
    factory: Box<dyn HandlerFactory>,
) -> Result<RunningWorker> {
    let conn = WorkerConn::register(addr, service).map_err(|e| stage_err(service, e))?;
    let writer = conn.writer();
    let thread = thread::spawn(move || conn.run(factory.as_ref()));
    Ok(RunningWorker { writer, thread })
}

/// Loaded models and data, so that every startup failure happens before
/// anything connects.
struct Prepared {
    doc: Document,
    cascade: CascadeSpec,
    confusion: Option<Arc<ConfusionTable>>,
    punctuator: Option<Arc<Punctuator>>,
    simulator: MtSimulator,
    preload: Option<Arc<TranslationCache>>,
}

fn prepare(cfg: &SessionRunConfig) -> Result<Prepared> {
    let doc = load_document(&cfg.doc_dir)
        .map_err(|e| stage_err("asr", format!("{}: {e}", cfg.doc_dir.display())))?;
    let cascade = cfg.cascade_for(&doc)?;
    let mut asr = cfg.asr.clone();
    asr.confusion_seed = cfg.seed;
    asr.validate()?;
    let confusion = match &cfg.confusion {
        Some(p) => Some(Arc::new(
            ConfusionTable::load(p).map_err(|e| stage_err("asr", e))?,
        )),
        None => None,
    };

    let punctuator = match cascade
        .services
        .iter()
        .find(|s| s.kind == ServiceKind::Punct)
    {
        Some(service) => {
            let path = cfg.punct_model.as_ref().ok_or_else(|| {
                stage_err(service, "no punctuation model configured (punct.model)")
            })?;
            let model = CountModel::load(path)
                .map_err(|e| stage_err(service, format!("{}: {e}", path.display())))?;
            let mut p = Punctuator::new(model.window_model(), &service.source_lang);
            if let Some(path) = &cfg.truecase_model {
                let tc = TruecaseModel::load(path)
                    .map_err(|e| stage_err(service, format!("{}: {e}", path.display())))?;
                p = p.with_truecaser(tc);
            }
            Some(Arc::new(p))
        }
        None => None,
    };

    let mt_service = cascade.services.last().expect("validated").clone();
    let mut mt = cfg.mt.clone();
    mt.seed = cfg.seed;
    mt.target_lang = mt_service.target_lang.clone();
    let dictionary = match (mt.transform, &mt.dict_path) {
        (MtTransform::Dictionary, Some(p)) => Some(
            Dictionary::load(p)
                .map_err(|e| stage_err(&mt_service, format!("{}: {e}", p.display())))?,
        ),
        _ => None,
    };
    let simulator =
        MtSimulator::with_dictionary(mt, dictionary).map_err(|e| stage_err(&mt_service, e))?;
    let preload = match &cfg.cache_import {
        Some(p) => {
            Some(Arc::new(TranslationCache::load(p).map_err(|e| {
                stage_err(&mt_service, format!("{}: {e}", p.display()))
            })?))
        }
        None => None,
    };
    Ok(Prepared {
        doc,
        cascade,
        confusion,
        punctuator,
        simulator,
        preload,
    })
}

pub fn run_session(cfg: &SessionRunConfig) -> Result<SessionSummary> {
    let prepared = prepare(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;

    let mut own_mediator: Option<MediatorHandle> = None;
    let addr = match cfg.mediator {
        Some(a) => a,
        None => {
            let m = mediator::spawn("127.0.0.1:0", MediatorConfig::default())?;
            let a = m.local_addr();
            own_mediator = Some(m);
            a
        }
    };

    let result = run_with_workers(cfg, prepared, addr);
    if let Some(mut m) = own_mediator {
        m.shutdown();
    }
    result
}

fn run_with_workers(
    cfg: &SessionRunConfig,
    p: Prepared,
    addr: SocketAddr,
) -> Result<SessionSummary> {
    let mut asr = cfg.asr.clone();
    asr.confusion_seed = cfg.seed;
    let (report_tx, report_rx) = channel();
    let mut workers = Vec::new();
    let started = (|| -> Result<()> {
        for service in &p.cascade.services {
            let factory: Box<dyn HandlerFactory> = match service.kind {
                ServiceKind::Asr => Box::new(AsrSimFactory {
                    transcript: Arc::new(p.doc.transcript.clone()),
                    config: asr.clone(),
                    confusion: p.confusion.clone(),
                    mode: cfg.mode,
                }),
                ServiceKind::Punct => Box::new(PunctFactory {
                    punctuator: Arc::clone(p.punctuator.as_ref().expect("prepared")),
                }),
                ServiceKind::Mt => {
                    let backend = service.with_kind(ServiceKind::MtBatch)?;
                    workers.push(start_worker(
                        addr,
                        &backend,
                        Box::new(MtSimFactory {
                            simulator: p.simulator.clone(),
                            mode: cfg.mode,
                        }),
                    )?);
                    Box::new(SharedWrapperFactory(Arc::new(WrapperFactory {
                        mediator: addr,
                        mt_service: backend,
                        config: cfg.wrapper,
                        language: service.source_lang.clone(),
                        mode: cfg.mode,
                        log: Some(cfg.out_dir.join(EMISSIONS_FILE)),
                        reports: Some(report_tx.clone()),
                        preload: p.preload.clone(),
                    })))
                }
                ServiceKind::MtBatch => unreachable!("rejected by cascade validation"),
            };
            workers.push(start_worker(addr, service, factory)?);
        }
        Ok(())
    })();

    let outcome = started.and_then(|()| drive_client(addr, &p.cascade));
    for w in &workers {
        w.writer.close();
    }
    for w in workers {
        match w.thread.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => log::debug!("worker ended: {e}"),
            Err(_) => log::error!("worker thread panicked"),
        }
    }
    let received = outcome?;
    let report = report_rx.try_recv().map_err(|_| {
        stage_err(
            p.cascade.services.last().expect("validated"),
            "no session report",
        )
    })?;
    write_outputs(cfg, p.cascade, received, report)
}

fn drive_client(addr: SocketAddr, cascade: &CascadeSpec) -> Result<Vec<EmissionRecord>> {
    let mut client = ClientSession::open(addr, cascade)?;
    // The recognizer reads its document itself; the client only ends the
    // input side and collects output.
    client.send_eos()?;
    let mut received = Vec::new();
    while let Some(msg) = client.recv_data()? {
        let (Some(index), Some(version)) = (msg.index, msg.version) else {
            return Err(Error::Protocol(format!(
                "emission without index/version: {}",
                msg.to_line()
            )));
        };
        let ts = msg.ts_ms.unwrap_or(0);
        received.push(EmissionRecord {
            index,
            version,
            text: msg.text().to_string(),
            dispatch_ms: ts,
            emit_ms: ts,
            batch_id: None,
            cache_hit: false,
        });
    }
    client.close();
    Ok(received)
}

fn write_outputs(
    cfg: &SessionRunConfig,
    cascade: CascadeSpec,
    received: Vec<EmissionRecord>,
    report: WrapperReport,
) -> Result<SessionSummary> {
    let out = &cfg.out_dir;
    let mt = cascade.services.last().expect("validated");
    let target = mt.target_lang.clone();

    let finals: BTreeMap<usize, String> = crate::mtwrapper::final_translations(&received);
    let translations: Vec<String> = finals.into_values().collect();
    fs::write(
        out.join(format!("translation.{target}.txt")),
        lines(&translations),
    )?;
    fs::write(
        out.join(format!("source.{}.txt", mt.source_lang)),
        lines(&report.final_sources),
    )?;
    // The wrapper already wrote its own logs; rewrite them so a run
    // against an external mediator leaves the same files.
    fs::write(
        out.join(EMISSIONS_FILE),
        render_emission_log(&report.emissions),
    )?;
    fs::write(
        batch_log_path(&out.join(EMISSIONS_FILE)),
        crate::mtwrapper::render_batch_log(&report.batches),
    )?;

    let batch_ms: Vec<f64> = report
        .batches
        .iter()
        .map(|b| b.elapsed_ms() as f64)
        .collect();
    let mut latency = String::from("#mt\tbatch_ms\n");
    for ms in &batch_ms {
        let _ = writeln!(latency, "{MT_SIM_LABEL}\t{ms}");
    }
    fs::write(out.join(LATENCY_FILE), latency)?;

    let stats = latency_stats(&batch_ms).ok();
    let mut timing = String::new();
    let _ = writeln!(timing, "cascade\t{cascade}");
    let _ = writeln!(timing, "emissions\t{}", report.emissions.len());
    let _ = writeln!(timing, "batches\t{}", report.batches.len());
    let _ = writeln!(
        timing,
        "outdated_segments\t{}",
        report.batches.iter().map(|b| b.outdated).sum::<usize>()
    );
    let _ = writeln!(timing, "mt_segments\t{}", report.mt_segments);
    let _ = writeln!(timing, "cache_hits\t{}", report.cache_hits);
    match stats {
        Some(s) => {
            let (avg, worst) = expected_delay(&batch_ms)?;
            let _ = writeln!(timing, "batch_ms\t{:.2} ± {:.2}", s.avg, s.std);
            let _ = writeln!(timing, "expected_delay_ms\t{avg:.2}");
            let _ = writeln!(timing, "worst_delay_ms\t{worst:.2}");
        }
        None => {
            let _ = writeln!(timing, "batch_ms\tn/a (fewer than 2 batches)");
        }
    }
    fs::write(out.join(TIMING_FILE), timing)?;

    Ok(SessionSummary {
        out_dir: out.clone(),
        cascade,
        received,
        translations,
        sources: report.final_sources.clone(),
        report,
        latency: stats,
    })
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}
