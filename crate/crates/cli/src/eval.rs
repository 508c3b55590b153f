use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use slt_core::eval::report::{load_results, render_report};
use slt_core::eval::selection::weighted_wer;
use slt_core::eval::{corpus_bleu, format_fixed, mwer_segment, wer_text, BleuResult};
use slt_core::fixture::load_document;
use slt_core::types::Document;
use slt_core::Error;

use crate::MissingInput;

#[derive(Clone, Copy, ValueEnum)]
pub enum WeightSource {
    /// Token count of the timed transcript.
    Transcript,
    /// Token count of the normalized reference text.
    Reference,
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Word error rate against the reference transcript; with several
    /// documents also the token-weighted average.
    Wer {
        #[arg(long, required = true)]
        doc: Vec<PathBuf>,
        #[arg(long, required = true)]
        hyp: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "transcript")]
        weights_from: WeightSource,
    },
    /// Corpus BLEU of sentence-aligned hypotheses.
    Bleu {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Reference language; defaults to the only translation present.
        #[arg(long)]
        lang: Option<String>,
    },
    /// Resegment an unsegmented hypothesis to the reference sentences,
    /// print one segment per line, and score it.
    Mwer {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        lang: Option<String>,
        /// Write segments here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Same as the top-level `report`.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct ReportArgs {
    /// Directory with wer.tsv, docs.tsv, bleu.tsv, latency.tsv, ...
    dir: PathBuf,
    /// Also write the long-format TSV dump here.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

fn doc(dir: &Path) -> Result<Document> {
    if !dir.is_dir() {
        return Err(MissingInput(format!("document {}", dir.display())).into());
    }
    load_document(dir).with_context(|| format!("loading document {}", dir.display()))
}

fn read_hyp(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(MissingInput(format!("hypothesis {}", path.display())).into());
    }
    Ok(fs::read_to_string(path)?)
}

/// Reference sets in `lang`; the source language means the transcript.
fn references(d: &Document, lang: Option<&str>) -> Result<(String, Vec<Vec<String>>)> {
    let lang = match lang {
        Some(l) => l.to_string(),
        None => {
            let langs: Vec<&String> = d.reference_translations.keys().collect();
            match langs.as_slice() {
                [only] => only.to_string(),
                _ => {
                    return Err(Error::Config(format!(
                        "{}: choose a reference language with --lang (have {:?})",
                        d.doc_id, langs
                    ))
                    .into())
                }
            }
        }
    };
    if lang == d.source_lang {
        return Ok((lang, vec![d.reference_sentences()]));
    }
    match d.reference_translations.get(&lang) {
        Some(sets) => Ok((lang, sets.clone())),
        None => Err(MissingInput(format!("{} has no {lang} reference", d.doc_id)).into()),
    }
}

fn print_bleu(label: &str, b: &BleuResult) {
    let p: Vec<String> = b
        .precisions
        .iter()
        .map(|p| format_fixed(100.0 * p, 1))
        .collect();
    println!(
        "{label}BLEU = {} {} (BP = {:.3} ratio = {:.3} hyp_len = {} ref_len = {})",
        format_fixed(b.bleu, 2),
        p.join("/"),
        b.brevity_penalty,
        b.candidate_length as f64 / b.reference_length.max(1) as f64,
        b.candidate_length,
        b.reference_length
    );
}

pub fn run(command: EvalCommand) -> Result<u8> {
    match command {
        EvalCommand::Wer {
            doc: docs,
            hyp,
            weights_from,
        } => {
            if docs.len() != hyp.len() {
                return Err(
                    Error::Config(format!("{} --doc but {} --hyp", docs.len(), hyp.len())).into(),
                );
            }
            println!("doc\tref_tokens\tsub\tins\tdel\twer");
            let mut weighted = Vec::new();
            for (dir, h) in docs.iter().zip(&hyp) {
                let d = doc(dir)?;
                let r = wer_text(&d.reference_sentences().join(" "), &read_hyp(h)?)?;
                let weight = match weights_from {
                    WeightSource::Transcript => d.token_count(),
                    WeightSource::Reference => r.reference_length,
                };
                println!(
                    "{}\t{weight}\t{}\t{}\t{}\t{}",
                    d.doc_id,
                    r.substitutions,
                    r.insertions,
                    r.deletions,
                    format_fixed(r.wer, 2)
                );
                weighted.push((r.wer, weight));
            }
            if weighted.len() > 1 {
                println!(
                    "weighted\t{}\t\t\t\t{}",
                    weighted.iter().map(|w| w.1).sum::<usize>(),
                    format_fixed(weighted_wer(&weighted)?, 2)
                );
            }
            Ok(0)
        }
        EvalCommand::Bleu {
            doc: dir,
            hyp,
            lang,
        } => {
            let d = doc(&dir)?;
            let (_, refs) = references(&d, lang.as_deref())?;
            let text = read_hyp(&hyp)?;
            let candidates: Vec<&str> = text.lines().collect();
            if let Some(r) = refs.iter().find(|r| r.len() != candidates.len()) {
                return Err(Error::LengthMismatch(format!(
                    "{} hypothesis lines but {} reference sentences; resegment with `eval mwer`",
                    candidates.len(),
                    r.len()
                ))
                .into());
            }
            let refs: Vec<Vec<&str>> = refs
                .iter()
                .map(|r| r.iter().map(String::as_str).collect())
                .collect();
            print_bleu("", &corpus_bleu(&candidates, &refs)?);
            Ok(0)
        }
        EvalCommand::Mwer {
            doc: dir,
            hyp,
            lang,
            out,
        } => {
            let d = doc(&dir)?;
            let (_, refs) = references(&d, lang.as_deref())?;
            let text = read_hyp(&hyp)?;
            let tokens: Vec<&str> = text.split_whitespace().collect();
            let key = |t: &str| {
                t.trim_matches(|c: char| !c.is_alphanumeric())
                    .to_lowercase()
            };
            let hyp_keys: Vec<String> = tokens.iter().map(|t| key(t)).collect();
            let ref_keys: Vec<Vec<String>> = refs[0]
                .iter()
                .map(|s| s.split_whitespace().map(key).collect())
                .collect();
            let seg = mwer_segment(&hyp_keys, &ref_keys);
            let segments: Vec<String> = seg.chunks(&tokens).iter().map(|c| c.join(" ")).collect();
            let rendered: String = segments.iter().map(|s| format!("{s}\n")).collect();
            match &out {
                Some(p) => fs::write(p, rendered)?,
                None => print!("{rendered}"),
            }
            let refs: Vec<Vec<&str>> = refs
                .iter()
                .map(|r| r.iter().map(String::as_str).collect())
                .collect();
            let bleu = corpus_bleu(
                &segments.iter().map(String::as_str).collect::<Vec<_>>(),
                &refs,
            )?;
            eprintln!(
                "segments = {} edit_cost = {}",
                segments.len(),
                seg.total_edit_cost
            );
            eprintln!(
                "BLEU = {} (BP = {:.3} hyp_len = {} ref_len = {})",
                format_fixed(bleu.bleu, 2),
                bleu.brevity_penalty,
                bleu.candidate_length,
                bleu.reference_length
            );
            Ok(0)
        }
        EvalCommand::Report(args) => report(&args),
    }
}

/// Prints the tables; exit code 4 when no input file was found.
pub fn report(args: &ReportArgs) -> Result<u8> {
    let results = if args.dir.is_dir() {
        load_results(&args.dir)?
    } else {
        log::warn!("{} is not a directory", args.dir.display());
        Default::default()
    };
    let report = render_report(&results)?;
    print!("{}", report.text);
    if let Some(path) = &args.tsv {
        fs::write(path, &report.tsv)?;
    }
    if results.is_empty() {
        eprintln!(
            "error: {}",
            MissingInput(format!("no results in {}", args.dir.display()))
        );
        return Ok(4);
    }
    if !report.missing.is_empty() {
        log::warn!("missing inputs: {}", report.missing.join(", "));
    }
    Ok(0)
}
