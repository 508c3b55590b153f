//! Evaluation results directory and the five report tables.
//!
//! Input files (tab-separated, `#` lines ignored):
//!
//! | file                  | columns                                            |
//! |-----------------------|----------------------------------------------------|
//! | `wer.tsv`             | system, group, domain, doc, ref_tokens, wer        |
//! | `exclusions.tsv`      | system, domain, reason                             |
//! | `docs.tsv`            | domain, doc, sentences, tokens, duration, references |
//! | `bleu.tsv`            | lang, mt, doc, source, bleu                        |
//! | `latency.tsv`         | mt, batch_ms (one row per batch)                   |
//! | `latency_summary.tsv` | mt, avg_ms, std_ms                                 |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::format_fixed;
use super::latency::latency_stats;
use super::selection::{
    select_candidate, source_average, BleuCell, DomainReport, Group, WerTable, GOLD_SOURCE,
};
use crate::error::{Error, Result};

pub const WER_FILE: &str = "wer.tsv";
pub const EXCLUSIONS_FILE: &str = "exclusions.tsv";
pub const DOCS_FILE: &str = "docs.tsv";
pub const BLEU_FILE: &str = "bleu.tsv";
pub const LATENCY_FILE: &str = "latency.tsv";
pub const LATENCY_SUMMARY_FILE: &str = "latency_summary.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct DevDocument {
    pub domain: String,
    pub doc: String,
    pub sentences: usize,
    pub tokens: usize,
    pub duration: String,
    pub references: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Results {
    pub wer: Option<WerTable>,
    pub docs: Option<Vec<DevDocument>>,
    /// Language -> cells.
    pub bleu: Option<BTreeMap<String, Vec<BleuCell>>>,
    /// MT system -> per-batch milliseconds.
    pub latency_samples: Option<Vec<(String, Vec<f64>)>>,
    pub latency_summary: Option<Vec<(String, f64, f64)>>,
}

impl Results {
    /// Input files that were not found.
    pub fn missing(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.wer.is_none() {
            out.push(WER_FILE);
        }
        if self.docs.is_none() {
            out.push(DOCS_FILE);
        }
        if self.bleu.is_none() {
            out.push(BLEU_FILE);
        }
        if self.latency_samples.is_none() && self.latency_summary.is_none() {
            out.push(LATENCY_FILE);
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.missing().len() == 4
    }
}

fn read_rows(path: &Path, columns: usize) -> Result<Option<Vec<Vec<String>>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rows = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
        if cols.len() != columns {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {columns} columns, got {}", cols.len()),
            ));
        }
        rows.push(cols);
    }
    Ok(Some(rows))
}

fn num<T: std::str::FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(path, 0, format!("bad number {s:?}")))
}

pub fn load_results(dir: &Path) -> Result<Results> {
    let mut results = Results::default();

    let path = dir.join(WER_FILE);
    if let Some(rows) = read_rows(&path, 6)? {
        let mut table = WerTable::new();
        for r in rows {
            let group: Group = r[1].parse()?;
            table.add_system(&r[0], group);
            table.add_document(&r[3], &r[2], num(&path, &r[4])?);
            table.set(&r[0], &r[3], num(&path, &r[5])?);
        }
        let ex_path = dir.join(EXCLUSIONS_FILE);
        for r in read_rows(&ex_path, 3)?.unwrap_or_default() {
            table.exclude(&r[0], &r[1], &r[2]);
        }
        results.wer = Some(table);
    }

    let path = dir.join(DOCS_FILE);
    if let Some(rows) = read_rows(&path, 6)? {
        let mut docs = Vec::new();
        for r in rows {
            docs.push(DevDocument {
                domain: r[0].clone(),
                doc: r[1].clone(),
                sentences: num(&path, &r[2])?,
                tokens: num(&path, &r[3])?,
                duration: r[4].clone(),
                references: num(&path, &r[5])?,
            });
        }
        results.docs = Some(docs);
    }

    let path = dir.join(BLEU_FILE);
    if let Some(rows) = read_rows(&path, 5)? {
        let mut by_lang: BTreeMap<String, Vec<BleuCell>> = BTreeMap::new();
        for r in rows {
            by_lang.entry(r[0].clone()).or_default().push(BleuCell::new(
                &r[1],
                &r[3],
                &r[2],
                num(&path, &r[4])?,
            ));
        }
        results.bleu = Some(by_lang);
    }

    let path = dir.join(LATENCY_FILE);
    if let Some(rows) = read_rows(&path, 2)? {
        let mut samples: Vec<(String, Vec<f64>)> = Vec::new();
        for r in rows {
            let v: f64 = num(&path, &r[1])?;
            match samples.iter_mut().find(|(mt, _)| *mt == r[0]) {
                Some((_, xs)) => xs.push(v),
                None => samples.push((r[0].clone(), vec![v])),
            }
        }
        results.latency_samples = Some(samples);
    }

    let path = dir.join(LATENCY_SUMMARY_FILE);
    if let Some(rows) = read_rows(&path, 3)? {
        let mut summary = Vec::new();
        for r in rows {
            summary.push((r[0].clone(), num(&path, &r[1])?, num(&path, &r[2])?));
        }
        results.latency_summary = Some(summary);
    }

    Ok(results)
}

/// Rendered tables: aligned text for people, a long-format TSV for tools.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub text: String,
    pub tsv: String,
    pub missing: Vec<&'static str>,
}

struct TextTable {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    note: Option<String>,
}

impl TextTable {
    fn new(title: &str, header: &[&str]) -> Self {
        TextTable {
            title: title.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
            note: None,
        }
    }

    fn render(&self, out: &mut String) {
        let cols = self
            .header
            .len()
            .max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut widths = vec![0; cols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let _ = writeln!(out, "{}", self.title);
        let line = |row: &[String], out: &mut String| {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{c:<w$}", w = widths[i])
                    } else {
                        format!("{c:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        };
        line(&self.header, out);
        let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        let _ = writeln!(out, "{}", "-".repeat(total));
        for row in &self.rows {
            line(row, out);
        }
        if let Some(note) = &self.note {
            let _ = writeln!(out, "{note}");
        }
        out.push('\n');
    }
}

fn gap(file: &str) -> Option<String> {
    Some(format!("(no data: {file} missing)"))
}

pub fn render_report(results: &Results) -> Result<Report> {
    let mut report = Report {
        missing: results.missing(),
        ..Report::default()
    };
    let tsv = &mut report.tsv;

    // Table 1: per-document WER.
    let mut t1 = TextTable::new("Table 1: WER of individual documents", &["system"]);
    // Table 3: weighted domain WER.
    let mut t3 = TextTable::new("Table 3: weighted average WER per domain", &["system"]);
    match &results.wer {
        Some(table) => {
            t1.header
                .extend(table.documents.iter().map(|d| d.doc.clone()));
            for (system, _) in &table.systems {
                let mut row = vec![system.clone()];
                for d in &table.documents {
                    let excluded = table.is_excluded(system, &d.domain);
                    row.push(match table.get(system, &d.doc) {
                        Some(w) => {
                            let _ = writeln!(
                                tsv,
                                "table1\t{system}\t{}\t{}\t{}",
                                d.doc,
                                format_fixed(w, 2),
                                u8::from(excluded)
                            );
                            strike(format_fixed(w, 2), excluded)
                        }
                        None => "-".into(),
                    });
                }
                t1.rows.push(row);
            }

            let domain_report = DomainReport::build(table)?;
            t3.header.extend(domain_report.domains.iter().cloned());
            t3.header.push("avg domain".into());
            t3.header.push("group".into());
            let offline = select_candidate(&domain_report, Group::Offline);
            let online = select_candidate(&domain_report, Group::Online);
            for row in &domain_report.rows {
                let ranking = if row.group == Group::Offline {
                    &offline
                } else {
                    &online
                };
                let mut cells = vec![mark(
                    row.system.clone(),
                    ranking.best() == Some(&row.system),
                )];
                for (i, domain) in domain_report.domains.iter().enumerate() {
                    cells.push(match row.domain_wer[i] {
                        Some(w) => {
                            let _ = writeln!(
                                tsv,
                                "table3\t{}\t{domain}\t{}\t{}",
                                row.system,
                                format_fixed(w, 2),
                                u8::from(row.excluded[i])
                            );
                            let best = ranking
                                .per_domain_best
                                .iter()
                                .any(|(d, s, _)| d == domain && *s == row.system);
                            mark(strike(format_fixed(w, 2), row.excluded[i]), best)
                        }
                        None => "-".into(),
                    });
                }
                cells.push(match row.avg_domain {
                    Some(a) => {
                        let _ = writeln!(
                            tsv,
                            "table3\t{}\tavg domain\t{}\t0",
                            row.system,
                            format_fixed(a, 2)
                        );
                        mark(format_fixed(a, 2), ranking.best() == Some(&row.system))
                    }
                    None => "-".into(),
                });
                cells.push(row.group.to_string());
                t3.rows.push(cells);
            }
            for (group, ranking) in [(Group::Offline, &offline), (Group::Online, &online)] {
                if let Some(best) = ranking.best() {
                    let _ = writeln!(tsv, "selected\t{group}\t{best}");
                }
                for (domain, system, w) in &ranking.per_domain_best {
                    let _ = writeln!(
                        tsv,
                        "domain_best\t{group}\t{domain}\t{system}\t{}",
                        format_fixed(*w, 2)
                    );
                }
            }
            if !table.exclusions.is_empty() {
                let notes: Vec<String> = table
                    .exclusions
                    .iter()
                    .map(|e| {
                        format!(
                            "~{} on {}~ not considered: {}",
                            e.system, e.domain, e.reason
                        )
                    })
                    .collect();
                t3.note = Some(format!(
                    "* lowest considered WER in group; {}",
                    notes.join("; ")
                ));
            }
        }
        None => {
            t1.note = gap(WER_FILE);
            t3.note = gap(WER_FILE);
        }
    }

    // Table 2: development set.
    let mut t2 = TextTable::new(
        "Table 2: development set",
        &[
            "domain",
            "document",
            "sents.",
            "tokens",
            "duration",
            "references",
        ],
    );
    match &results.docs {
        Some(docs) => {
            for d in docs {
                let _ = writeln!(
                    tsv,
                    "table2\t{}\t{}\t{}\t{}\t{}\t{}",
                    d.domain, d.doc, d.sentences, d.tokens, d.duration, d.references
                );
                t2.rows.push(vec![
                    d.domain.clone(),
                    d.doc.clone(),
                    d.sentences.to_string(),
                    d.tokens.to_string(),
                    d.duration.clone(),
                    d.references.to_string(),
                ]);
            }
        }
        None => t2.note = gap(DOCS_FILE),
    }

    // Table 4: BLEU per ASR source with source averages, one block per language.
    let mut t4_tables = Vec::new();
    match &results.bleu {
        Some(by_lang) => {
            for (lang, cells) in by_lang {
                let mut sources: Vec<&str> = Vec::new();
                let mut docs: Vec<&str> = Vec::new();
                let mut systems: Vec<&str> = Vec::new();
                for c in cells {
                    if c.source != GOLD_SOURCE && !sources.contains(&c.source.as_str()) {
                        sources.push(&c.source);
                    }
                    if !docs.contains(&c.doc.as_str()) {
                        docs.push(&c.doc);
                    }
                    if !systems.contains(&c.mt.as_str()) {
                        systems.push(&c.mt);
                    }
                }
                let has_gold = cells.iter().any(|c| c.source == GOLD_SOURCE);
                let mut header = vec!["MT", "document"];
                if has_gold {
                    header.push(GOLD_SOURCE);
                }
                header.extend(sources.iter().copied());
                header.push("avg");
                let mut t4 = TextTable::new(
                    &format!("Table 4: BLEU into {lang} per ASR source"),
                    &header,
                );
                let lookup = |mt: &str, doc: &str, src: &str| {
                    cells
                        .iter()
                        .find(|c| c.mt == mt && c.doc == doc && c.source == src)
                        .map(|c| c.bleu)
                };
                for &doc in &docs {
                    let mut rows: Vec<(f64, Vec<String>)> = Vec::new();
                    for &mt in &systems {
                        let Some(avg) = source_average(cells, mt, doc) else {
                            continue;
                        };
                        let mut row = vec![mt.to_string(), doc.to_string()];
                        if has_gold {
                            row.push(
                                lookup(mt, doc, GOLD_SOURCE)
                                    .map_or("-".into(), |b| format_fixed(b, 3)),
                            );
                        }
                        for &src in &sources {
                            row.push(
                                lookup(mt, doc, src).map_or("-".into(), |b| format_fixed(b, 3)),
                            );
                        }
                        row.push(format_fixed(avg, 3));
                        let _ = writeln!(
                            tsv,
                            "table4\t{lang}\t{mt}\t{doc}\tavg\t{}",
                            format_fixed(avg, 3)
                        );
                        rows.push((avg, row));
                    }
                    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
                    t4.rows.extend(rows.into_iter().map(|(_, r)| r));
                }
                t4_tables.push(t4);
            }
        }
        None => {
            let mut t4 = TextTable::new("Table 4: BLEU per ASR source", &["MT", "document", "avg"]);
            t4.note = gap(BLEU_FILE);
            t4_tables.push(t4);
        }
    }

    // Table 5: batch translation time.
    let mut t5 = TextTable::new(
        "Table 5: time to translate one batch (ms)",
        &["MT", "avg ± std dev"],
    );
    let mut any_latency = false;
    if let Some(samples) = &results.latency_samples {
        any_latency = true;
        for (mt, xs) in samples {
            let cell = match latency_stats(xs) {
                Ok(s) => {
                    let _ = writeln!(
                        tsv,
                        "table5\t{mt}\t{}\t{}",
                        format_fixed(s.avg, 2),
                        format_fixed(s.std, 2)
                    );
                    format!("{} ± {}", format_fixed(s.avg, 2), format_fixed(s.std, 2))
                }
                Err(_) => format!(
                    "{} ± -",
                    format_fixed(xs.iter().sum::<f64>() / xs.len() as f64, 2)
                ),
            };
            t5.rows.push(vec![mt.clone(), cell]);
        }
    }
    if let Some(summary) = &results.latency_summary {
        any_latency = true;
        for (mt, avg, std) in summary {
            let _ = writeln!(
                tsv,
                "table5\t{mt}\t{}\t{}",
                format_fixed(*avg, 2),
                format_fixed(*std, 2)
            );
            t5.rows.push(vec![
                mt.clone(),
                format!("{} ± {}", format_fixed(*avg, 2), format_fixed(*std, 2)),
            ]);
        }
    }
    if !any_latency {
        t5.note = gap(LATENCY_FILE);
    }

    for t in [&t1, &t2, &t3] {
        t.render(&mut report.text);
    }
    for t in &t4_tables {
        t.render(&mut report.text);
    }
    t5.render(&mut report.text);
    Ok(report)
}

fn strike(cell: String, excluded: bool) -> String {
    if excluded {
        format!("~{cell}~")
    } else {
        cell
    }
}

fn mark(cell: String, best: bool) -> String {
    if best {
        format!("*{cell}")
    } else {
        cell
    }
}
