//! Candidate selection: token-weighted domain WER for recognizers and
//! source-averaged BLEU ranking for translation systems.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reference-token-weighted mean of per-document WERs.
pub fn weighted_wer(doc_wers: &[(f64, usize)]) -> Result<f64> {
    if doc_wers.is_empty() {
        return Err(Error::NoSamples);
    }
    if doc_wers.iter().any(|&(_, w)| w == 0) {
        return Err(Error::Config("document weight must be positive".into()));
    }
    let total: usize = doc_wers.iter().map(|&(_, w)| w).sum();
    let sum: f64 = doc_wers.iter().map(|&(wer, w)| wer * w as f64).sum();
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Offline,
    Online,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Offline => "offline",
            Group::Online => "online",
        })
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Group::Offline),
            "online" => Ok(Group::Online),
            other => Err(Error::Config(format!("unknown group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentInfo {
    pub doc: String,
    pub domain: String,
    pub ref_tokens: usize,
}

/// A (system, domain) cell left out of selection, e.g. for training overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub system: String,
    pub domain: String,
    pub reason: String,
}

/// Per-document WERs of every system, the input of [`DomainReport::build`].
#[derive(Debug, Clone, Default)]
pub struct WerTable {
    pub systems: Vec<(String, Group)>,
    pub documents: Vec<DocumentInfo>,
    cells: HashMap<(String, String), f64>,
    pub exclusions: Vec<Exclusion>,
}

impl WerTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_system(&mut self, system: &str, group: Group) {
        if !self.systems.iter().any(|(s, _)| s == system) {
            self.systems.push((system.to_string(), group));
        }
    }

    pub fn add_document(&mut self, doc: &str, domain: &str, ref_tokens: usize) {
        if !self.documents.iter().any(|d| d.doc == doc) {
            self.documents.push(DocumentInfo {
                doc: doc.to_string(),
                domain: domain.to_string(),
                ref_tokens,
            });
        }
    }

    pub fn set(&mut self, system: &str, doc: &str, wer: f64) {
        self.cells
            .insert((system.to_string(), doc.to_string()), wer);
    }

    pub fn get(&self, system: &str, doc: &str) -> Option<f64> {
        self.cells
            .get(&(system.to_string(), doc.to_string()))
            .copied()
    }

    pub fn exclude(&mut self, system: &str, domain: &str, reason: &str) {
        self.exclusions.push(Exclusion {
            system: system.to_string(),
            domain: domain.to_string(),
            reason: reason.to_string(),
        });
    }

    pub fn is_excluded(&self, system: &str, domain: &str) -> bool {
        self.exclusions
            .iter()
            .any(|e| e.system == system && e.domain == domain)
    }

    /// Domains in order of first appearance.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for d in &self.documents {
            if !out.contains(&d.domain) {
                out.push(d.domain.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDomains {
    pub system: String,
    pub group: Group,
    /// Weighted WER per domain, `None` when the system has no documents there.
    pub domain_wer: Vec<Option<f64>>,
    pub excluded: Vec<bool>,
    /// Unweighted mean over every available domain cell, excluded ones included.
    pub avg_domain: Option<f64>,
    /// Unweighted mean over considered (non-excluded) domain cells; used for ranking.
    pub avg_considered: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainReport {
    pub domains: Vec<String>,
    pub rows: Vec<SystemDomains>,
}

impl DomainReport {
    pub fn build(table: &WerTable) -> Result<Self> {
        let domains = table.domains();
        let mut rows = Vec::with_capacity(table.systems.len());
        for (system, group) in &table.systems {
            let mut domain_wer = Vec::with_capacity(domains.len());
            let mut excluded = Vec::with_capacity(domains.len());
            for domain in &domains {
                let docs: Vec<(f64, usize)> = table
                    .documents
                    .iter()
                    .filter(|d| &d.domain == domain)
                    .filter_map(|d| table.get(system, &d.doc).map(|w| (w, d.ref_tokens)))
                    .collect();
                domain_wer.push(if docs.is_empty() {
                    None
                } else {
                    Some(weighted_wer(&docs)?)
                });
                excluded.push(table.is_excluded(system, domain));
            }
            let all: Vec<f64> = domain_wer.iter().flatten().copied().collect();
            let considered: Vec<f64> = domain_wer
                .iter()
                .zip(&excluded)
                .filter(|(_, &ex)| !ex)
                .filter_map(|(w, _)| *w)
                .collect();
            rows.push(SystemDomains {
                system: system.clone(),
                group: *group,
                domain_wer,
                excluded,
                avg_domain: mean(&all),
                avg_considered: mean(&considered),
            });
        }
        Ok(DomainReport { domains, rows })
    }

    pub fn row(&self, system: &str) -> Option<&SystemDomains> {
        self.rows.iter().find(|r| r.system == system)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRanking {
    /// Ascending by considered cross-domain average; ties keep input order.
    pub ranked: Vec<(String, f64)>,
    /// Lowest considered WER per domain within the group.
    pub per_domain_best: Vec<(String, String, f64)>,
}

impl CandidateRanking {
    pub fn best(&self) -> Option<&str> {
        self.ranked.first().map(|(s, _)| s.as_str())
    }
}

pub fn select_candidate(report: &DomainReport, mode: Group) -> CandidateRanking {
    let rows: Vec<&SystemDomains> = report.rows.iter().filter(|r| r.group == mode).collect();
    let mut ranked: Vec<(String, f64)> = rows
        .iter()
        .filter_map(|r| r.avg_considered.map(|a| (r.system.clone(), a)))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut per_domain_best = Vec::new();
    for (i, domain) in report.domains.iter().enumerate() {
        let mut best: Option<(&str, f64)> = None;
        for r in &rows {
            if r.excluded[i] {
                continue;
            }
            if let Some(w) = r.domain_wer[i] {
                if best.is_none_or(|(_, b)| w < b) {
                    best = Some((&r.system, w));
                }
            }
        }
        if let Some((system, w)) = best {
            per_domain_best.push((domain.clone(), system.to_string(), w));
        }
    }
    CandidateRanking {
        ranked,
        per_domain_best,
    }
}

/// Source name whose scores are shown but never averaged or ranked.
pub const GOLD_SOURCE: &str = "gold";

#[derive(Debug, Clone, PartialEq)]
pub struct BleuCell {
    pub mt: String,
    pub source: String,
    pub doc: String,
    pub bleu: f64,
}

impl BleuCell {
    pub fn new(mt: &str, source: &str, doc: &str, bleu: f64) -> Self {
        BleuCell {
            mt: mt.to_string(),
            source: source.to_string(),
            doc: doc.to_string(),
            bleu,
        }
    }
}

/// Mean BLEU of `mt` on `doc` over every non-gold source.
pub fn source_average(cells: &[BleuCell], mt: &str, doc: &str) -> Option<f64> {
    let scores: Vec<f64> = cells
        .iter()
        .filter(|c| c.mt == mt && c.doc == doc && c.source != GOLD_SOURCE)
        .map(|c| c.bleu)
        .collect();
    mean(&scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtRanking {
    /// Systems scored on every selected document, by descending mean of
    /// their per-document source averages; ties keep input order.
    pub ranking: Vec<(String, f64)>,
    /// Highest source average per selected document.
    pub winners: Vec<(String, String, f64)>,
    /// The system that wins every selected document, if one exists.
    pub dominant: Option<String>,
    /// The dominant system, or the top of `ranking` when none dominates.
    pub selected: Option<String>,
}

impl MtRanking {
    pub fn no_dominant_system(&self) -> bool {
        self.dominant.is_none()
    }
}

pub fn mt_rank(cells: &[BleuCell], docs: &[&str]) -> MtRanking {
    let mut systems: Vec<&str> = Vec::new();
    for c in cells {
        if !systems.contains(&c.mt.as_str()) {
            systems.push(&c.mt);
        }
    }

    let mut winners = Vec::new();
    for &doc in docs {
        let mut best: Option<(&str, f64)> = None;
        for &mt in &systems {
            if let Some(avg) = source_average(cells, mt, doc) {
                if best.is_none_or(|(_, b)| avg > b) {
                    best = Some((mt, avg));
                }
            }
        }
        if let Some((mt, avg)) = best {
            winners.push((doc.to_string(), mt.to_string(), avg));
        }
    }

    let mut ranking: Vec<(String, f64)> = systems
        .iter()
        .filter_map(|&mt| {
            let per_doc: Option<Vec<f64>> = docs
                .iter()
                .map(|doc| source_average(cells, mt, doc))
                .collect();
            per_doc.and_then(|v| mean(&v)).map(|m| (mt.to_string(), m))
        })
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));

    let winner_set: BTreeSet<&str> = winners.iter().map(|(_, mt, _)| mt.as_str()).collect();
    let dominant = if !docs.is_empty() && winners.len() == docs.len() && winner_set.len() == 1 {
        winner_set.into_iter().next().map(str::to_string)
    } else {
        None
    };
    let selected = dominant
        .clone()
        .or_else(|| ranking.first().map(|(mt, _)| mt.clone()));
    MtRanking {
        ranking,
        winners,
        dominant,
        selected,
    }
}
