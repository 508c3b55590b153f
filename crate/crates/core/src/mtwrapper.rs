//! Adapter between a self-updating punctuated stream and a batch MT
//! service.
//!
//! The receiving side splits each update into sentences and records which
//! indices changed; the translating side repeatedly drains the changed set,
//! answers what it can from the session cache, and sends the rest to MT as
//! one batch. Anything that changed again while the batch was in flight is
//! translated anew; its superseded result is cached but never emitted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::punctuation::sentence_statuses;
use crate::simworkers::MtSimulator;
use crate::text::NonbreakingPrefixes;
use crate::types::{Sentence, SentenceStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StabilityLevel {
    /// Translate every sentence, including the incomplete last one.
    #[default]
    All,
    CompletedOnly,
    StableOnly,
}

impl StabilityLevel {
    pub fn admits(self, status: SentenceStatus) -> bool {
        match self {
            StabilityLevel::All => true,
            StabilityLevel::CompletedOnly => status >= SentenceStatus::Completed,
            StabilityLevel::StableOnly => status == SentenceStatus::Stable,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StabilityLevel::All => "all",
            StabilityLevel::CompletedOnly => "completed",
            StabilityLevel::StableOnly => "stable",
        }
    }
}

impl FromStr for StabilityLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(StabilityLevel::All),
            "completed" | "completed_only" => Ok(StabilityLevel::CompletedOnly),
            "stable" | "stable_only" => Ok(StabilityLevel::StableOnly),
            _ => Err(Error::Config(format!(
                "unknown stability level {s:?} (all, completed, stable)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WrapperConfig {
    /// Words withheld from the end of incomplete sentences.
    pub mask_k: usize,
    pub stability_level: StabilityLevel,
    pub cache_enabled: bool,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        WrapperConfig {
            mask_k: 0,
            stability_level: StabilityLevel::All,
            cache_enabled: true,
        }
    }
}

/// The text to translate for `sentence`, or `None` when masking leaves
/// nothing. Only incomplete sentences are masked.
pub fn mask_tail(sentence: &Sentence, k: usize) -> Option<String> {
    if sentence.status != SentenceStatus::Incomplete || k == 0 {
        return (!sentence.text.trim().is_empty()).then(|| sentence.text.clone());
    }
    let words: Vec<&str> = sentence.text.split_whitespace().collect();
    (k < words.len()).then(|| words[..words.len() - k].join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferEntry {
    pub sentence: Sentence,
    pub version: u64,
}

/// Latest sentence per index plus the set of indices changed since the
/// last drain.
#[derive(Debug, Clone, Default)]
pub struct SegmentBuffer {
    entries: Vec<BufferEntry>,
    /// Highest version ever assigned per index, kept across removals so
    /// versions stay strictly increasing.
    versions: Vec<u64>,
    dirty: BTreeSet<usize>,
    retracted: BTreeSet<usize>,
}

impl SegmentBuffer {
    /// Replaces the buffer contents with `sentences`. An index becomes
    /// dirty when its text or status changed; a text change bumps its
    /// version. Indices beyond the new sentence count are retracted.
    /// Returns the number of indices marked dirty.
    pub fn ingest(&mut self, sentences: &[Sentence]) -> usize {
        let mut marked = 0;
        for (i, s) in sentences.iter().enumerate() {
            if self.versions.len() <= i {
                self.versions.push(0);
            }
            let changed_text = self
                .entries
                .get(i)
                .is_none_or(|e| e.sentence.text != s.text);
            let changed_status = self
                .entries
                .get(i)
                .is_some_and(|e| e.sentence.status != s.status);
            if changed_text {
                self.versions[i] += 1;
            }
            let entry = BufferEntry {
                sentence: Sentence::new(i, s.text.clone(), s.status),
                version: self.versions[i],
            };
            if i < self.entries.len() {
                self.entries[i] = entry;
            } else {
                self.entries.push(entry);
            }
            if changed_text || changed_status {
                marked += usize::from(self.dirty.insert(i));
                self.retracted.remove(&i);
            }
        }
        for i in sentences.len()..self.entries.len() {
            self.dirty.remove(&i);
            self.retracted.insert(i);
        }
        self.entries.truncate(sentences.len());
        marked
    }

    pub fn get(&self, index: usize) -> Option<&BufferEntry> {
        self.entries.get(index)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dirty(&self) -> &BTreeSet<usize> {
        &self.dirty
    }

    pub fn sentences(&self) -> Vec<Sentence> {
        self.entries.iter().map(|e| e.sentence.clone()).collect()
    }

    fn mark_dirty(&mut self, index: usize) {
        if index < self.entries.len() {
            self.dirty.insert(index);
        }
    }
}

/// Exact-match source -> translation map for one session.
#[derive(Debug, Clone, Default)]
pub struct TranslationCache {
    map: HashMap<String, String>,
    pub hits: u64,
    pub misses: u64,
}

impl TranslationCache {
    /// Reads `source<TAB>translation` lines; `#` starts a comment line.
    /// Sources are kept verbatim, since lookups are exact.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cache = TranslationCache::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (source, translation) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n + 1, "expected source<TAB>translation"))?;
            cache.insert(source.to_string(), translation.to_string());
        }
        Ok(cache)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn lookup(&mut self, source: &str) -> Option<String> {
        let found = self.map.get(source).cloned();
        if found.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        found
    }

    /// Keeps the first translation stored for a source.
    pub fn insert(&mut self, source: String, translation: String) {
        self.map.entry(source).or_insert(translation);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmissionRecord {
    pub index: usize,
    pub version: u64,
    /// Translated text; empty for a retracted index.
    pub text: String,
    pub dispatch_ms: u64,
    pub emit_ms: u64,
    pub batch_id: Option<u64>,
    pub cache_hit: bool,
}

pub const EMISSION_LOG_HEADER: &str =
    "#index\tversion\tbatch_id\tcache_hit\tdispatch_ms\temit_ms\ttext";

impl EmissionRecord {
    pub fn to_tsv(&self) -> String {
        let batch = self
            .batch_id
            .map_or_else(|| "-".to_string(), |b| b.to_string());
        format!(
            "{}\t{}\t{batch}\t{}\t{}\t{}\t{}",
            self.index,
            self.version,
            u8::from(self.cache_hit),
            self.dispatch_ms,
            self.emit_ms,
            self.text
        )
    }

    pub fn parse_tsv(line: &str, path: &Path, lineno: usize) -> Result<Self> {
        let f: Vec<&str> = line.splitn(7, '\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(
                path,
                lineno,
                "expected 7 tab-separated fields",
            ));
        }
        let num = |s: &str| -> Result<u64> {
            s.parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number {s:?}")))
        };
        Ok(EmissionRecord {
            index: num(f[0])? as usize,
            version: num(f[1])?,
            batch_id: if f[2] == "-" { None } else { Some(num(f[2])?) },
            cache_hit: f[3] == "1",
            dispatch_ms: num(f[4])?,
            emit_ms: num(f[5])?,
            text: f[6].to_string(),
        })
    }
}

pub fn render_emission_log(records: &[EmissionRecord]) -> String {
    let mut out = String::from(EMISSION_LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

pub fn parse_emission_log(text: &str, path: &Path) -> Result<Vec<EmissionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| EmissionRecord::parse_tsv(l, path, n + 1))
        .collect()
}

/// Last emitted text per index; retracted indices are dropped.
pub fn final_translations(records: &[EmissionRecord]) -> BTreeMap<usize, String> {
    let mut last = BTreeMap::new();
    for r in records {
        if r.text.is_empty() {
            last.remove(&r.index);
        } else {
            last.insert(r.index, r.text.clone());
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub index: usize,
    pub version: u64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRequest {
    pub batch_id: u64,
    pub dispatch_ms: u64,
    pub items: Vec<BatchItem>,
}

impl BatchRequest {
    pub fn sources(&self) -> Vec<String> {
        self.items.iter().map(|i| i.source.clone()).collect()
    }
}

/// Timing of one MT call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRecord {
    pub batch_id: u64,
    pub dispatch_ms: u64,
    pub return_ms: u64,
    pub segments: usize,
    /// Results superseded while in flight.
    pub outdated: usize,
}

impl BatchRecord {
    pub fn elapsed_ms(&self) -> u64 {
        self.return_ms - self.dispatch_ms
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Iteration {
    /// Cache hits and retractions, emitted at dispatch time.
    pub emissions: Vec<EmissionRecord>,
    pub batch: Option<BatchRequest>,
}

/// Buffer, cache and bookkeeping of one wrapper session.
#[derive(Debug, Clone)]
pub struct Wrapper {
    pub config: WrapperConfig,
    pub buffer: SegmentBuffer,
    pub cache: TranslationCache,
    prefixes: NonbreakingPrefixes,
    last_text: Option<(String, usize)>,
    next_batch: u64,
    pub batches: Vec<BatchRecord>,
    /// Segments sent to MT.
    pub mt_segments: u64,
    /// Source behind the last emission per index, so that a status-only
    /// change does not repeat an identical emission.
    emitted: HashMap<usize, String>,
}

impl Wrapper {
    pub fn new(config: WrapperConfig, language: &str) -> Self {
        Wrapper {
            config,
            buffer: SegmentBuffer::default(),
            cache: TranslationCache::default(),
            prefixes: NonbreakingPrefixes::for_language(language),
            last_text: None,
            next_batch: 1,
            batches: Vec::new(),
            mt_segments: 0,
            emitted: HashMap::new(),
        }
    }

    /// Receiving side: one punctuated update whose first `stable_chars`
    /// bytes will not change.
    pub fn ingest_text(&mut self, text: &str, stable_chars: usize) -> usize {
        self.last_text = Some((text.to_string(), stable_chars));
        let sentences =
            sentence_statuses(text, stable_chars.min(text.len()), false, &self.prefixes);
        self.buffer.ingest(&sentences)
    }

    /// The upstream ended: every sentence of the last update is final.
    pub fn finalize(&mut self) -> usize {
        let Some((text, _)) = self.last_text.clone() else {
            return 0;
        };
        let sentences = sentence_statuses(&text, text.len(), true, &self.prefixes);
        self.buffer.ingest(&sentences)
    }

    pub fn has_work(&self) -> bool {
        !self.buffer.dirty.is_empty() || !self.buffer.retracted.is_empty()
    }

    /// Translating side, first half: drain the dirty set atomically, emit
    /// retractions and cache hits, and assemble one batch from the rest.
    pub fn begin_iteration(&mut self, now_ms: u64) -> Iteration {
        let mut it = Iteration::default();
        for index in std::mem::take(&mut self.buffer.retracted) {
            self.emitted.remove(&index);
            it.emissions.push(EmissionRecord {
                index,
                version: self.buffer.versions[index],
                text: String::new(),
                dispatch_ms: now_ms,
                emit_ms: now_ms,
                batch_id: None,
                cache_hit: false,
            });
        }
        let mut items = Vec::new();
        for index in std::mem::take(&mut self.buffer.dirty) {
            let entry = &self.buffer.entries[index];
            if !self.config.stability_level.admits(entry.sentence.status) {
                continue;
            }
            let Some(source) = mask_tail(&entry.sentence, self.config.mask_k) else {
                continue;
            };
            if self.emitted.get(&index) == Some(&source) {
                continue;
            }
            let hit = if self.config.cache_enabled {
                self.cache.lookup(&source)
            } else {
                None
            };
            match hit {
                Some(text) => {
                    self.emitted.insert(index, source);
                    it.emissions.push(EmissionRecord {
                        index,
                        version: entry.version,
                        text,
                        dispatch_ms: now_ms,
                        emit_ms: now_ms,
                        batch_id: None,
                        cache_hit: true,
                    })
                }
                None => items.push(BatchItem {
                    index,
                    version: entry.version,
                    source,
                }),
            }
        }
        if !items.is_empty() {
            self.mt_segments += items.len() as u64;
            it.batch = Some(BatchRequest {
                batch_id: self.next_batch,
                dispatch_ms: now_ms,
                items,
            });
            self.next_batch += 1;
        }
        it
    }

    /// Translating side, second half: cache the results and emit those
    /// whose source is still the current version.
    pub fn finish_batch(
        &mut self,
        batch: BatchRequest,
        translations: Vec<String>,
        return_ms: u64,
    ) -> Result<Vec<EmissionRecord>> {
        if translations.len() != batch.items.len() {
            let msg = format!(
                "batch {} returned {} of {} segments",
                batch.batch_id,
                translations.len(),
                batch.items.len()
            );
            self.abort_batch(&batch);
            return Err(Error::Mt(msg));
        }
        let mut out = Vec::new();
        let mut outdated = 0;
        for (item, text) in batch.items.iter().zip(translations) {
            if self.config.cache_enabled {
                self.cache.insert(item.source.clone(), text.clone());
            }
            let current = self
                .buffer
                .get(item.index)
                .is_some_and(|e| e.version == item.version);
            if current {
                self.emitted.insert(item.index, item.source.clone());
                out.push(EmissionRecord {
                    index: item.index,
                    version: item.version,
                    text,
                    dispatch_ms: batch.dispatch_ms,
                    emit_ms: return_ms.max(batch.dispatch_ms),
                    batch_id: Some(batch.batch_id),
                    cache_hit: false,
                });
            } else {
                outdated += 1;
            }
        }
        self.batches.push(BatchRecord {
            batch_id: batch.batch_id,
            dispatch_ms: batch.dispatch_ms,
            return_ms: return_ms.max(batch.dispatch_ms),
            segments: batch.items.len(),
            outdated,
        });
        Ok(out)
    }

    /// The MT call failed: its entries become dirty again.
    pub fn abort_batch(&mut self, batch: &BatchRequest) {
        for item in &batch.items {
            self.buffer.mark_dirty(item.index);
        }
    }
}

/// Average batch time (the expected delay) and the worst case of waiting
/// for one batch and then translating the next.
pub fn expected_delay(batch_times: &[f64]) -> Result<(f64, f64)> {
    if batch_times.is_empty() {
        return Err(Error::NoSamples);
    }
    let avg = batch_times.iter().sum::<f64>() / batch_times.len() as f64;
    let worst = if batch_times.len() == 1 {
        batch_times[0]
    } else {
        batch_times
            .windows(2)
            .map(|w| w[0] + w[1])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    Ok((avg, worst))
}

/// A synchronous batch MT endpoint returning outputs and elapsed time.
pub trait BatchTranslator {
    fn translate(&mut self, segments: &[String]) -> Result<(Vec<String>, u64)>;
}

impl BatchTranslator for MtSimulator {
    fn translate(&mut self, segments: &[String]) -> Result<(Vec<String>, u64)> {
        let (out, elapsed) = MtSimulator::translate(self, segments)?;
        Ok((out, elapsed.round() as u64))
    }
}

/// One upstream update at a point in (virtual) time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub ts_ms: u64,
    pub text: String,
    pub stable_chars: usize,
}

/// Runs a wrapper session in virtual time.
///
/// `next_event` yields upstream updates in timestamp order and `None` at
/// the end of the stream; it may block. Before acting at time `t` the
/// driver applies every update with timestamp `<= t`, so the outcome
/// depends only on the timestamps, never on scheduling.
pub fn drive(
    wrapper: &mut Wrapper,
    mt: &mut dyn BatchTranslator,
    mut next_event: impl FnMut() -> Option<TraceEvent>,
    mut emit: impl FnMut(&EmissionRecord) -> Result<()>,
) -> Result<()> {
    let mut pending: Option<TraceEvent> = None;
    let mut ended = false;
    let mut finalized = false;
    let mut now = 0u64;

    let mut apply_until =
        |wrapper: &mut Wrapper, t: u64, pending: &mut Option<TraceEvent>, ended: &mut bool| loop {
            if pending.is_none() && !*ended {
                *pending = next_event();
                *ended = pending.is_none();
            }
            match pending.take() {
                Some(ev) if ev.ts_ms <= t => {
                    wrapper.ingest_text(&ev.text, ev.stable_chars);
                }
                other => {
                    *pending = other;
                    break;
                }
            }
        };

    loop {
        apply_until(wrapper, now, &mut pending, &mut ended);
        if !wrapper.has_work() {
            if let Some(ev) = &pending {
                now = now.max(ev.ts_ms);
                continue;
            }
            if ended && !finalized {
                finalized = true;
                wrapper.finalize();
                continue;
            }
            break;
        }
        let it = wrapper.begin_iteration(now);
        for e in &it.emissions {
            emit(e)?;
        }
        if let Some(batch) = it.batch {
            let (translations, elapsed) = match mt.translate(&batch.sources()) {
                Ok(r) => r,
                Err(e) => {
                    wrapper.abort_batch(&batch);
                    return Err(e);
                }
            };
            let ret = now + elapsed;
            apply_until(wrapper, ret, &mut pending, &mut ended);
            for e in wrapper.finish_batch(batch, translations, ret)? {
                emit(&e)?;
            }
            now = ret;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub emissions: Vec<EmissionRecord>,
    pub batches: Vec<BatchRecord>,
    pub final_sentences: Vec<Sentence>,
    pub final_translations: BTreeMap<usize, String>,
    pub mt_segments: u64,
}

/// Replays a recorded trace through a fresh wrapper.
pub fn simulate(
    trace: &[TraceEvent],
    config: WrapperConfig,
    language: &str,
    mt: &mut dyn BatchTranslator,
) -> Result<SimOutcome> {
    let mut wrapper = Wrapper::new(config, language);
    let mut events = trace.iter().cloned();
    let mut emissions = Vec::new();
    drive(
        &mut wrapper,
        mt,
        || events.next(),
        |e| {
            emissions.push(e.clone());
            Ok(())
        },
    )?;
    Ok(SimOutcome {
        final_translations: final_translations(&emissions),
        emissions,
        batches: wrapper.batches.clone(),
        final_sentences: wrapper.buffer.sentences(),
        mt_segments: wrapper.mt_segments,
    })
}

pub fn render_batch_log(batches: &[BatchRecord]) -> String {
    let mut out = String::from("#batch_id\tdispatch_ms\treturn_ms\tsegments\toutdated\n");
    for b in batches {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            b.batch_id, b.dispatch_ms, b.return_ms, b.segments, b.outdated
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str, status: SentenceStatus) -> Sentence {
        Sentence::new(0, text, status)
    }

    /// Uppercases, taking a fixed time per batch; counts calls.
    struct Upper {
        latency: u64,
        calls: Vec<Vec<String>>,
    }

    impl BatchTranslator for Upper {
        fn translate(&mut self, segments: &[String]) -> Result<(Vec<String>, u64)> {
            self.calls.push(segments.to_vec());
            Ok((
                segments.iter().map(|s| s.to_uppercase()).collect(),
                self.latency,
            ))
        }
    }

    fn ev(ts_ms: u64, text: &str, stable_chars: usize) -> TraceEvent {
        TraceEvent {
            ts_ms,
            text: text.into(),
            stable_chars,
        }
    }

    #[test]
    fn mask_examples() {
        use SentenceStatus::*;
        assert_eq!(
            mask_tail(&s("a b c d e", Incomplete), 2).as_deref(),
            Some("a b c")
        );
        assert_eq!(
            mask_tail(&s("a b c d e", Completed), 2).as_deref(),
            Some("a b c d e")
        );
        assert_eq!(mask_tail(&s("a b", Incomplete), 5), None);
        assert_eq!(mask_tail(&s("a b", Incomplete), 2), None);
        assert_eq!(mask_tail(&s("a b", Incomplete), 0).as_deref(), Some("a b"));
    }

    #[test]
    fn change_detection() {
        let mut w = Wrapper::new(WrapperConfig::default(), "en");
        assert_eq!(w.ingest_text("Hello there. How", 0), 2);
        w.begin_iteration(0);
        assert_eq!(w.ingest_text("Hello there. How", 0), 0);
        assert_eq!(w.ingest_text("Hello there. How are", 0), 1);
        assert_eq!(
            w.buffer.dirty().iter().copied().collect::<Vec<_>>(),
            vec![1]
        );
        assert_eq!(w.buffer.get(1).unwrap().version, 2);
        assert_eq!(w.ingest_text("Hello there. How are. You", 0), 1);
        assert_eq!(w.buffer.len(), 3);
    }

    #[test]
    fn oscillation_redirties() {
        let mut w = Wrapper::new(WrapperConfig::default(), "en");
        for (k, text) in ["Hello.", "Hello,", "Hello.", "Hello,"].iter().enumerate() {
            assert_eq!(w.ingest_text(text, 0), 1, "step {k}");
            w.begin_iteration(0);
        }
        assert_eq!(w.buffer.get(0).unwrap().version, 4);
    }

    #[test]
    fn cache_hit_needs_no_mt_call() {
        let mut w = Wrapper::new(WrapperConfig::default(), "en");
        w.ingest_text("Hi there", 0);
        let batch = w.begin_iteration(0).batch.unwrap();
        let emitted = w.finish_batch(batch, vec!["HI THERE".into()], 10).unwrap();
        assert_eq!(emitted.len(), 1);
        w.ingest_text("Hi now", 0);
        let batch = w.begin_iteration(10).batch.unwrap();
        w.finish_batch(batch, vec!["HI NOW".into()], 20).unwrap();
        // Back to a translated variant: served from the cache.
        w.ingest_text("Hi there", 0);
        let it = w.begin_iteration(20);
        assert!(it.batch.is_none());
        assert_eq!(it.emissions.len(), 1);
        assert!(it.emissions[0].cache_hit);
        assert_eq!(it.emissions[0].text, "HI THERE");
    }

    #[test]
    fn status_change_alone_emits_nothing() {
        let mut w = Wrapper::new(WrapperConfig::default(), "en");
        w.ingest_text("Hi there", 0);
        let batch = w.begin_iteration(0).batch.unwrap();
        w.finish_batch(batch, vec!["HI THERE".into()], 10).unwrap();
        w.ingest_text("Hi there", 8);
        w.finalize();
        assert!(w.has_work());
        let it = w.begin_iteration(20);
        assert!(it.batch.is_none() && it.emissions.is_empty());
        assert!(!w.has_work());
    }

    #[test]
    fn oscillating_variants_translated_twice() {
        let trace: Vec<TraceEvent> = (0..20)
            .map(|i| ev(i * 500, if i % 2 == 0 { "Hello." } else { "Hello," }, 0))
            .collect();
        let mut mt = Upper {
            latency: 100,
            calls: vec![],
        };
        let out = simulate(&trace, WrapperConfig::default(), "en", &mut mt).unwrap();
        assert_eq!(
            mt.calls,
            vec![vec!["Hello.".to_string()], vec!["Hello,".to_string()]]
        );
        assert!(out.emissions[2..].iter().all(|e| e.cache_hit));
        assert_eq!(out.final_translations[&0], "HELLO,");
    }

    #[test]
    fn slow_mt_skips_intermediate_versions() {
        // MT takes 300 ms; the sentence changes every 100 ms.
        let trace = vec![
            ev(0, "v1", 0),
            ev(100, "v2", 0),
            ev(200, "v3", 0),
            ev(300, "v4", 0),
        ];
        let mut mt = Upper {
            latency: 300,
            calls: vec![],
        };
        let out = simulate(&trace, WrapperConfig::default(), "en", &mut mt).unwrap();
        let sent: Vec<String> = mt.calls.concat();
        assert_eq!(sent, vec!["v1", "v4"]);
        // Turning stable at the end of the stream changes nothing visible.
        let versions: Vec<u64> = out.emissions.iter().map(|e| e.version).collect();
        assert_eq!(versions, vec![4]);
        assert_eq!(out.emissions[0].text, "V4");
        assert_eq!(
            (out.emissions[0].dispatch_ms, out.emissions[0].emit_ms),
            (300, 600)
        );
        assert_eq!(out.batches[0].outdated, 1);
    }

    #[test]
    fn retraction_when_sentences_merge() {
        let trace = vec![
            ev(0, "Ask Dr. Who", 0),
            ev(10, "Ask Dr. Who. Now", 0),
            ev(20, "Ask dr. who", 0),
        ];
        let mut mt = Upper {
            latency: 1,
            calls: vec![],
        };
        let out = simulate(&trace, WrapperConfig::default(), "en", &mut mt).unwrap();
        assert!(out.emissions.iter().any(|e| e.text.is_empty()));
        assert_eq!(out.final_translations.len(), 1);
    }

    #[test]
    fn stability_levels_filter() {
        let trace = vec![ev(0, "One. Two", 0), ev(100, "One. Two three.", 8)];
        for (level, first_batch) in [
            (StabilityLevel::All, vec!["One.", "Two"]),
            (StabilityLevel::CompletedOnly, vec!["One."]),
            (StabilityLevel::StableOnly, vec!["One."]),
        ] {
            let cfg = WrapperConfig {
                stability_level: level,
                ..WrapperConfig::default()
            };
            let mut mt = Upper {
                latency: 10,
                calls: vec![],
            };
            let out = simulate(&trace, cfg, "en", &mut mt).unwrap();
            assert_eq!(mt.calls[0], first_batch, "{level:?}");
            assert_eq!(
                out.final_translations.values().cloned().collect::<Vec<_>>(),
                vec!["ONE.", "TWO THREE."]
            );
        }
    }

    #[test]
    fn mt_failure_preserves_dirty_set() {
        struct Broken;
        impl BatchTranslator for Broken {
            fn translate(&mut self, _: &[String]) -> Result<(Vec<String>, u64)> {
                Err(Error::Mt("down".into()))
            }
        }
        let mut w = Wrapper::new(WrapperConfig::default(), "en");
        w.ingest_text("A b. C", 0);
        let mut events = std::iter::empty();
        assert!(drive(&mut w, &mut Broken, || events.next(), |_| Ok(())).is_err());
        assert_eq!(w.buffer.dirty().len(), 2);
        let batch = w.begin_iteration(0).batch.unwrap();
        assert!(w.finish_batch(batch, vec![], 5).is_err());
        assert_eq!(w.buffer.dirty().len(), 2);
    }

    #[test]
    fn delay_model() {
        assert_eq!(expected_delay(&[275.51]).unwrap(), (275.51, 275.51));
        assert_eq!(expected_delay(&[0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert_eq!(expected_delay(&[100.0, 300.0]).unwrap(), (200.0, 400.0));
        assert_eq!(
            expected_delay(&[100.0, 300.0, 50.0, 10.0]).unwrap().1,
            400.0
        );
        assert!(matches!(expected_delay(&[]), Err(Error::NoSamples)));
    }

    #[test]
    fn log_round_trip() {
        let recs = vec![
            EmissionRecord {
                index: 0,
                version: 2,
                text: "Ahoj svete.".into(),
                dispatch_ms: 5,
                emit_ms: 300,
                batch_id: Some(1),
                cache_hit: false,
            },
            EmissionRecord {
                index: 1,
                version: 1,
                text: String::new(),
                dispatch_ms: 7,
                emit_ms: 7,
                batch_id: None,
                cache_hit: true,
            },
        ];
        let text = render_emission_log(&recs);
        assert_eq!(parse_emission_log(&text, Path::new("log")).unwrap(), recs);
    }

    #[test]
    fn cache_import_format() {
        let path = Path::new("c.tsv");
        let mut c = TranslationCache::parse("# note\nHi there.\tAhoj.\n\nA\tB\tC\n", path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.lookup("Hi there.").as_deref(), Some("Ahoj."));
        assert_eq!(c.lookup("A").as_deref(), Some("B\tC"));
        assert_eq!(c.lookup("hi there."), None);
        assert!(TranslationCache::parse("no tab\n", path).is_err());
    }
}
