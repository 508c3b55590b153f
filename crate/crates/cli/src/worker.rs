use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use slt_core::fixture::load_document;
use slt_core::mtwrapper::{StabilityLevel, TranslationCache, WrapperConfig};
use slt_core::peer::{HandlerFactory, WorkerConn};
use slt_core::protocol::{ServiceKind, ServiceName};
use slt_core::punctuation::{CountModel, Punctuator, TruecaseModel};
use slt_core::simworkers::{
    AsrSimConfig, ConfusionTable, Dictionary, MtSimConfig, MtSimulator, MtTransform,
};
use slt_core::workers::{
    AsrSimFactory, MtSimFactory, PunctFactory, SharedWrapperFactory, TimeMode, WrapperFactory,
};
use slt_core::Error;

use crate::DEFAULT_MEDIATOR;

#[derive(Args)]
pub struct Common {
    #[arg(long, env = "MEDIATOR_ADDR", default_value = DEFAULT_MEDIATOR)]
    mediator: String,
    /// Time base; every worker of a cascade must agree.
    #[arg(long, default_value = "wall")]
    mode: TimeMode,
}

#[derive(Subcommand)]
pub enum WorkerCommand {
    /// Simulated recognizer replaying a document's timed transcript.
    AsrSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        doc: PathBuf,
        #[arg(long, default_value_t = 200)]
        tick_ms: u64,
        #[arg(long, default_value_t = 1000)]
        window_ms: u64,
        #[arg(long, default_value_t = 0.1)]
        p_sub: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        speedup: f64,
        /// token<TAB>alternative<TAB>weight lines.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Simulated batch translator; serves the `mtbatch` variant of --service.
    MtSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        service: ServiceName,
        #[arg(long, default_value_t = 0.0)]
        base_ms: f64,
        #[arg(long, default_value_t = 0.0)]
        per_token_ms: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter_std_ms: f64,
        #[arg(long, default_value = "identity")]
        transform: MtTransform,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Punctuation and casing of recognizer output.
    Punct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truecase: Option<PathBuf>,
        #[arg(long, default_value = "en")]
        lang: String,
    },
    /// Re-translating wrapper in front of a batch translator.
    Mtwrapper {
        #[command(flatten)]
        common: Common,
        /// Service offered; the `mtbatch` variant is used for translation.
        #[arg(long)]
        mt_service: ServiceName,
        #[arg(long, default_value_t = 0)]
        mask_k: usize,
        #[arg(long, default_value = "all")]
        stability: StabilityLevel,
        #[arg(long, default_value = "on", value_parser = ["on", "off"])]
        cache: String,
        /// `source<TAB>translation` lines preloaded into every session's cache.
        #[arg(long)]
        cache_import: Option<PathBuf>,
        /// Emission log, rewritten after each session; batch timings go
        /// to <stem>.batches.tsv beside it.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()
        .map_err(|e| Error::Config(format!("mediator address {addr:?}: {e}")))?
        .next()
        .ok_or_else(|| {
            Error::Config(format!("mediator address {addr:?} resolves to nothing")).into()
        })
}

fn serve(addr: SocketAddr, service: &ServiceName, factory: &dyn HandlerFactory) -> Result<()> {
    let conn = WorkerConn::register(addr, service).map_err(|e| Error::Stage {
        stage: service.to_string(),
        message: format!("registering with {addr}: {e}"),
    })?;
    conn.run(factory)?;
    log::info!("{service}: mediator closed the connection");
    Ok(())
}

fn stage(service: &ServiceName, e: impl std::fmt::Display) -> Error {
    Error::Stage {
        stage: service.to_string(),
        message: e.to_string(),
    }
}

pub fn run(command: WorkerCommand) -> Result<()> {
    match command {
        WorkerCommand::AsrSim {
            common,
            doc,
            tick_ms,
            window_ms,
            p_sub,
            seed,
            speedup,
            confusion,
        } => {
            let addr = resolve(&common.mediator)?;
            let document = load_document(&doc)
                .with_context(|| format!("loading document {}", doc.display()))?;
            let service = ServiceName::asr(&document.source_lang)?;
            let config = AsrSimConfig {
                tick_ms,
                window_ms,
                p_substitute: p_sub,
                confusion_seed: seed,
                speedup,
            };
            config.validate()?;
            let confusion = match confusion {
                Some(p) => Some(Arc::new(
                    ConfusionTable::load(&p).map_err(|e| stage(&service, e))?,
                )),
                None => None,
            };
            let factory = AsrSimFactory {
                transcript: Arc::new(document.transcript),
                config,
                confusion,
                mode: common.mode,
            };
            serve(addr, &service, &factory)
        }
        WorkerCommand::MtSim {
            common,
            service,
            base_ms,
            per_token_ms,
            jitter_std_ms,
            transform,
            dict,
            seed,
        } => {
            let addr = resolve(&common.mediator)?;
            let service = service.with_kind(ServiceKind::MtBatch)?;
            let dictionary = match (&dict, transform) {
                (Some(p), MtTransform::Dictionary) => {
                    Some(Dictionary::load(p).map_err(|e| stage(&service, e))?)
                }
                _ => None,
            };
            let config = MtSimConfig {
                base_ms,
                per_token_ms,
                jitter_std_ms,
                transform,
                dict_path: dict,
                seed,
                target_lang: service.target_lang.clone(),
            };
            let simulator =
                MtSimulator::with_dictionary(config, dictionary).map_err(|e| stage(&service, e))?;
            let factory = MtSimFactory {
                simulator,
                mode: common.mode,
            };
            serve(addr, &service, &factory)
        }
        WorkerCommand::Punct {
            common,
            model,
            truecase,
            lang,
        } => {
            let addr = resolve(&common.mediator)?;
            let service = ServiceName::punct(&lang)?;
            let counts = CountModel::load(&model)
                .map_err(|e| stage(&service, format!("{}: {e}", model.display())))?;
            let mut punctuator = Punctuator::new(counts.window_model(), &lang);
            if let Some(p) = truecase {
                let tc = TruecaseModel::load(&p)
                    .map_err(|e| stage(&service, format!("{}: {e}", p.display())))?;
                punctuator = punctuator.with_truecaser(tc);
            }
            let factory = PunctFactory {
                punctuator: Arc::new(punctuator),
            };
            serve(addr, &service, &factory)
        }
        WorkerCommand::Mtwrapper {
            common,
            mt_service,
            mask_k,
            stability,
            cache,
            cache_import,
            log,
        } => {
            let addr = resolve(&common.mediator)?;
            if mt_service.kind != ServiceKind::Mt {
                return Err(Error::Config(format!(
                    "--mt-service must be an mt service, got {mt_service}"
                ))
                .into());
            }
            let preload = match cache_import {
                Some(p) => Some(Arc::new(
                    TranslationCache::load(&p).map_err(|e| stage(&mt_service, e))?,
                )),
                None => None,
            };
            let factory = SharedWrapperFactory(Arc::new(WrapperFactory {
                mediator: addr,
                mt_service: mt_service.with_kind(ServiceKind::MtBatch)?,
                config: WrapperConfig {
                    mask_k,
                    stability_level: stability,
                    cache_enabled: cache == "on",
                },
                language: mt_service.source_lang.clone(),
                mode: common.mode,
                log,
                reports: None,
                preload,
            }));
            serve(addr, &mt_service, &factory)
        }
    }
}
