//! Simulated recognizer and translator with seeded noise and latency.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::punctuation::capitalize_first;
use crate::types::{HypothesisUpdate, Token};

#[derive(Debug, Clone, PartialEq)]
pub struct AsrSimConfig {
    pub tick_ms: u64,
    /// Tokens that ended less than this long ago may still be revised.
    pub window_ms: u64,
    pub p_substitute: f64,
    pub confusion_seed: u64,
    /// Audio milliseconds consumed per clock millisecond.
    pub speedup: f64,
}

impl Default for AsrSimConfig {
    fn default() -> Self {
        AsrSimConfig {
            tick_ms: 200,
            window_ms: 1000,
            p_substitute: 0.1,
            confusion_seed: 0,
            speedup: 1.0,
        }
    }
}

impl AsrSimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tick_ms == 0 {
            return Err(Error::Config("asr tick_ms must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_substitute) {
            return Err(Error::Config(format!(
                "asr p_substitute {} not in [0, 1]",
                self.p_substitute
            )));
        }
        if !(self.speedup > 0.0 && self.speedup.is_finite()) {
            return Err(Error::Config(format!(
                "asr speedup {} must be positive",
                self.speedup
            )));
        }
        Ok(())
    }
}

/// Weighted alternatives per token, from `token<TAB>alternative<TAB>weight`
/// lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionTable {
    alternatives: HashMap<String, Vec<(String, f64)>>,
}

impl ConfusionTable {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = ConfusionTable::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [token, alt, weight] = fields[..] else {
                return Err(Error::parse(
                    path,
                    n + 1,
                    "expected token, alternative, weight",
                ));
            };
            let weight: f64 = weight
                .parse()
                .ok()
                .filter(|w: &f64| *w > 0.0 && w.is_finite())
                .ok_or_else(|| Error::parse(path, n + 1, format!("bad weight {weight:?}")))?;
            if alt != token && !alt.is_empty() && !alt.contains(char::is_whitespace) {
                table
                    .alternatives
                    .entry(token.to_string())
                    .or_default()
                    .push((alt.to_string(), weight));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

fn rng_for(seed: u64, index: usize, salt: u64) -> ChaCha8Rng {
    // SplitMix-style mixing keeps nearby (index, salt) pairs independent.
    let mut x = seed
        ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(x ^ (x >> 31))
}

/// A word that differs from `word`, drawn from the confusion table when it
/// has entries, otherwise by swapping two adjacent characters.
fn perturb(word: &str, confusion: Option<&ConfusionTable>, rng: &mut ChaCha8Rng) -> String {
    if let Some(alts) = confusion.and_then(|c| c.alternatives.get(word)) {
        if let Ok(dist) = WeightedIndex::new(alts.iter().map(|a| a.1)) {
            return alts[dist.sample(rng)].0.clone();
        }
    }
    let chars: Vec<char> = word.chars().collect();
    if chars.len() >= 2 {
        let start = rng.random_range(0..chars.len() - 1);
        for k in 0..chars.len() - 1 {
            let j = (start + k) % (chars.len() - 1);
            if chars[j] != chars[j + 1] {
                let mut swapped = chars.clone();
                swapped.swap(j, j + 1);
                return swapped.into_iter().collect();
            }
        }
    }
    // All characters equal (or a single one): lengthen instead.
    format!("{word}{}", chars[0])
}

/// Audio position reached at clock time `now_ms`.
fn audio_ms(now_ms: u64, cfg: &AsrSimConfig) -> u64 {
    (now_ms as f64 * cfg.speedup).floor() as u64
}

/// The hypothesis at clock time `now_ms`: every token that ended by the
/// current audio position, with tokens inside the instability window
/// possibly replaced. Whether a token is perturbed depends only on the
/// seed and its index; the replacement varies with `call`, so revisions
/// oscillate until the token leaves the window.
pub fn asr_emit(
    transcript: &[Token],
    now_ms: u64,
    cfg: &AsrSimConfig,
    confusion: Option<&ConfusionTable>,
    call: u64,
) -> HypothesisUpdate {
    let pos = audio_ms(now_ms, cfg);
    let end = |t: &Token| t.end_ms.or(t.start_ms).unwrap_or(0);
    let visible = transcript.iter().take_while(|t| end(t) <= pos).count();
    let stable = transcript[..visible]
        .iter()
        .take_while(|t| end(t) + cfg.window_ms <= pos)
        .count();
    let tokens = transcript[..visible]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i < stable || cfg.p_substitute <= 0.0 {
                return t.clone();
            }
            let hit = rng_for(cfg.confusion_seed, i, 0).random::<f64>() < cfg.p_substitute;
            if !hit {
                return t.clone();
            }
            let mut rng = rng_for(cfg.confusion_seed, i, call + 1);
            Token {
                text: perturb(&t.text, confusion, &mut rng),
                ..t.clone()
            }
        })
        .collect();
    HypothesisUpdate {
        session_id: String::new(),
        seq: call,
        tokens,
        stable_prefix: stable,
        emitted_at_ms: now_ms,
    }
}

/// Clock time at which the whole transcript is stable.
pub fn asr_final_ms(transcript: &[Token], cfg: &AsrSimConfig) -> u64 {
    let last = transcript
        .iter()
        .map(|t| t.end_ms.or(t.start_ms).unwrap_or(0))
        .max()
        .unwrap_or(0);
    ((last + cfg.window_ms) as f64 / cfg.speedup).ceil() as u64
}

/// Drives [`asr_emit`] on a clock: one call per tick, emitting only
/// updates that differ from the previous one, and always ending with the
/// clean transcript.
pub fn asr_run(
    transcript: &[Token],
    cfg: &AsrSimConfig,
    confusion: Option<&ConfusionTable>,
    clock: &dyn Clock,
    session: &str,
    mut emit: impl FnMut(HypothesisUpdate) -> Result<()>,
    mut cancelled: impl FnMut() -> bool,
) -> Result<usize> {
    cfg.validate()?;
    let start = clock.now_ms();
    let final_ms = asr_final_ms(transcript, cfg);
    let mut previous: Option<(Vec<Token>, usize)> = None;
    let mut emitted = 0;
    let mut call = 0;
    loop {
        if cancelled() {
            break;
        }
        let elapsed = (clock.now_ms() - start).min(final_ms);
        call += 1;
        let mut update = asr_emit(transcript, elapsed, cfg, confusion, call);
        let changed = previous
            .as_ref()
            .is_none_or(|(t, s)| *t != update.tokens || *s != update.stable_prefix);
        if changed && !update.tokens.is_empty() {
            update.session_id = session.to_string();
            update.seq = emitted as u64 + 1;
            previous = Some((update.tokens.clone(), update.stable_prefix));
            emit(update)?;
            emitted += 1;
        }
        if elapsed >= final_ms {
            break;
        }
        let next_tick = (elapsed / cfg.tick_ms + 1) * cfg.tick_ms;
        clock.sleep_ms(next_tick.min(final_ms) - elapsed);
    }
    Ok(emitted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MtTransform {
    #[default]
    Identity,
    /// Prefixes each segment with the target language tag.
    Tag,
    /// Word-by-word dictionary lookup; unknown words are copied.
    Dictionary,
}

impl FromStr for MtTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(MtTransform::Identity),
            "tag" => Ok(MtTransform::Tag),
            "dictionary" | "dict" => Ok(MtTransform::Dictionary),
            _ => Err(Error::Config(format!(
                "unknown transform {s:?} (identity, tag, dictionary)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtSimConfig {
    pub base_ms: f64,
    pub per_token_ms: f64,
    pub jitter_std_ms: f64,
    pub transform: MtTransform,
    pub dict_path: Option<PathBuf>,
    pub seed: u64,
    pub target_lang: String,
}

impl Default for MtSimConfig {
    fn default() -> Self {
        MtSimConfig {
            base_ms: 0.0,
            per_token_ms: 0.0,
            jitter_std_ms: 0.0,
            transform: MtTransform::Identity,
            dict_path: None,
            seed: 0,
            target_lang: "cs".into(),
        }
    }
}

/// Source word -> target word, from `source<TAB>target` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    entries: HashMap<String, String>,
}

impl Dictionary {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, tgt) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, n + 1, "expected source<TAB>target"))?;
            let (src, tgt) = (src.trim(), tgt.trim());
            if src.is_empty() || tgt.is_empty() {
                return Err(Error::parse(path, n + 1, "empty dictionary entry"));
            }
            entries.insert(src.to_string(), tgt.to_string());
        }
        Ok(Dictionary { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Dictionary {
            entries: pairs
                .into_iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
        }
    }

    /// Translates word by word. Punctuation around a word is kept; a
    /// capitalized word falls back to its lowercase entry and keeps the
    /// capital.
    pub fn translate(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|raw| {
                let start = raw.find(char::is_alphanumeric);
                let end = raw
                    .char_indices()
                    .rev()
                    .find(|(_, c)| c.is_alphanumeric())
                    .map(|(i, c)| i + c.len_utf8());
                let (Some(s), Some(e)) = (start, end) else {
                    return raw.to_string();
                };
                let core = &raw[s..e];
                let translated = match self.entries.get(core) {
                    Some(t) => t.clone(),
                    None => match self.entries.get(&core.to_lowercase()) {
                        Some(t) if core.chars().next().is_some_and(char::is_uppercase) => {
                            capitalize_first(t)
                        }
                        Some(t) => t.clone(),
                        None => core.to_string(),
                    },
                };
                format!("{}{translated}{}", &raw[..s], &raw[e..])
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A seeded simulated translator.
#[derive(Debug, Clone)]
pub struct MtSimulator {
    pub config: MtSimConfig,
    dictionary: Option<Dictionary>,
    rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
}

impl MtSimulator {
    pub fn new(config: MtSimConfig) -> Result<Self> {
        let dictionary = match (config.transform, &config.dict_path) {
            (MtTransform::Dictionary, Some(path)) => Some(Dictionary::load(path)?),
            (MtTransform::Dictionary, None) => {
                return Err(Error::Config(
                    "dictionary transform requires a dictionary path".into(),
                ))
            }
            _ => None,
        };
        Self::with_dictionary(config, dictionary)
    }

    pub fn with_dictionary(config: MtSimConfig, dictionary: Option<Dictionary>) -> Result<Self> {
        if config.base_ms < 0.0 || config.per_token_ms < 0.0 || config.jitter_std_ms < 0.0 {
            return Err(Error::Config(
                "mt latency parameters must be non-negative".into(),
            ));
        }
        if config.transform == MtTransform::Dictionary && dictionary.is_none() {
            return Err(Error::Config(
                "dictionary transform requires a dictionary".into(),
            ));
        }
        let jitter = (config.jitter_std_ms > 0.0)
            .then(|| Normal::new(0.0, config.jitter_std_ms))
            .transpose()
            .map_err(|e| Error::Config(format!("jitter: {e}")))?;
        Ok(MtSimulator {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            dictionary,
            jitter,
        })
    }

    /// Restarts the latency stream from the configured seed.
    pub fn reset(&mut self) {
        self.rng = ChaCha8Rng::seed_from_u64(self.config.seed);
    }

    pub fn transform(&self, segment: &str) -> String {
        match self.config.transform {
            MtTransform::Identity => segment.to_string(),
            MtTransform::Tag => format!("\u{27e6}{}\u{27e7} {segment}", self.config.target_lang),
            MtTransform::Dictionary => self
                .dictionary
                .as_ref()
                .map_or_else(|| segment.to_string(), |d| d.translate(segment)),
        }
    }

    /// Draws the processing time of a batch with `tokens` source tokens.
    pub fn draw_elapsed(&mut self, tokens: usize) -> f64 {
        let jitter = self.jitter.map_or(0.0, |n| n.sample(&mut self.rng));
        (self.config.base_ms + self.config.per_token_ms * tokens as f64 + jitter).max(0.0)
    }

    /// Translates without waiting; returns the outputs and the drawn time.
    pub fn translate(&mut self, segments: &[String]) -> Result<(Vec<String>, f64)> {
        if segments.is_empty() {
            return Err(Error::Mt("empty batch".into()));
        }
        let tokens = segments.iter().map(|s| s.split_whitespace().count()).sum();
        let elapsed = self.draw_elapsed(tokens);
        Ok((
            segments.iter().map(|s| self.transform(s)).collect(),
            elapsed,
        ))
    }
}

/// Translates one batch, spending the drawn processing time on `clock`.
pub fn mt_translate_batch(
    segments: &[String],
    sim: &mut MtSimulator,
    clock: &dyn Clock,
) -> Result<(Vec<String>, f64)> {
    let (out, elapsed) = sim.translate(segments)?;
    clock.sleep_ms(elapsed.round() as u64);
    Ok((out, elapsed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::eval::wer::wer;
    use crate::stream::StreamValidator;

    fn transcript(n: usize) -> Vec<Token> {
        (0..n)
            .map(|i| {
                Token::timed(format!("word{i}"), i as u64 * 300, i as u64 * 300 + 250).unwrap()
            })
            .collect()
    }

    fn run(tokens: &[Token], cfg: &AsrSimConfig) -> Vec<HypothesisUpdate> {
        let clock = SimClock::new();
        let mut out = Vec::new();
        asr_run(
            tokens,
            cfg,
            None,
            &clock,
            "s",
            |u| {
                out.push(u);
                Ok(())
            },
            || false,
        )
        .unwrap();
        out
    }

    #[test]
    fn noise_off_gives_clean_prefixes() {
        let tokens = transcript(20);
        let cfg = AsrSimConfig {
            p_substitute: 0.0,
            ..AsrSimConfig::default()
        };
        for u in run(&tokens, &cfg) {
            assert_eq!(u.tokens[..], tokens[..u.tokens.len()]);
        }
    }

    #[test]
    fn converges_to_transcript() {
        let tokens = transcript(15);
        let cfg = AsrSimConfig {
            p_substitute: 0.7,
            confusion_seed: 9,
            ..AsrSimConfig::default()
        };
        let late = asr_emit(&tokens, asr_final_ms(&tokens, &cfg) + 5000, &cfg, None, 3);
        assert_eq!(late.tokens, tokens);
        assert_eq!(late.stable_prefix, tokens.len());
        let updates = run(&tokens, &cfg);
        let last = updates.last().unwrap();
        assert_eq!(last.tokens, tokens);
        assert_eq!(last.stable_prefix, tokens.len());
        assert!(StreamValidator::check_all(&updates).is_ok());
        assert!(
            updates
                .iter()
                .any(|u| u.tokens[..] != tokens[..u.tokens.len()]),
            "noise was injected"
        );
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let tokens = transcript(12);
        let cfg = AsrSimConfig {
            p_substitute: 0.5,
            confusion_seed: 42,
            ..AsrSimConfig::default()
        };
        assert_eq!(run(&tokens, &cfg), run(&tokens, &cfg));
    }

    #[test]
    fn wer_non_increasing_after_end() {
        let tokens = transcript(10);
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let cfg = AsrSimConfig {
            p_substitute: 0.9,
            confusion_seed: 1,
            tick_ms: 50,
            ..AsrSimConfig::default()
        };
        let end = tokens.last().unwrap().end_ms.unwrap();
        let mut last = f64::INFINITY;
        for (k, now) in (end..=end + cfg.window_ms + 100).step_by(50).enumerate() {
            let u = asr_emit(&tokens, now, &cfg, None, k as u64);
            let hyp: Vec<&str> = u.words().collect();
            let w = wer(&words, &hyp).unwrap().wer;
            assert!(w <= last, "{w} > {last}");
            last = w;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn perturbation_always_differs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in ["ab", "aa", "a", "hello", "zzz", "été"] {
            assert_ne!(perturb(w, None, &mut rng), w);
        }
        let table =
            ConfusionTable::parse("their\tthere\t2\ntheir\tthey're\t1\n", Path::new("c")).unwrap();
        let alt = perturb("their", Some(&table), &mut rng);
        assert!(alt == "there" || alt == "they're");
    }

    #[test]
    fn speedup_scales_audio() {
        let tokens = transcript(10);
        let cfg = AsrSimConfig {
            speedup: 2.0,
            p_substitute: 0.0,
            ..AsrSimConfig::default()
        };
        assert_eq!(asr_emit(&tokens, 300, &cfg, None, 1).tokens.len(), 2);
    }

    #[test]
    fn null_mt_model() {
        let mut sim = MtSimulator::new(MtSimConfig::default()).unwrap();
        let clock = SimClock::new();
        let segs = vec!["hello world".to_string(), "Bye.".to_string()];
        let (out, elapsed) = mt_translate_batch(&segs, &mut sim, &clock).unwrap();
        assert_eq!(out, segs);
        assert_eq!(elapsed, 0.0);
        assert_eq!(clock.now_ms(), 0);
        assert!(sim.translate(&[]).is_err());
    }

    #[test]
    fn latency_is_spent_on_the_clock() {
        let cfg = MtSimConfig {
            base_ms: 100.0,
            per_token_ms: 10.0,
            ..MtSimConfig::default()
        };
        let mut sim = MtSimulator::new(cfg).unwrap();
        let clock = SimClock::new();
        let (_, elapsed) = mt_translate_batch(&["a b c".to_string()], &mut sim, &clock).unwrap();
        assert_eq!(elapsed, 130.0);
        assert_eq!(clock.now_ms(), 130);
    }

    #[test]
    fn transforms() {
        let tag = MtSimulator::new(MtSimConfig {
            transform: MtTransform::Tag,
            ..MtSimConfig::default()
        })
        .unwrap();
        assert_eq!(tag.transform("hi"), "\u{27e6}cs\u{27e7} hi");
        let d = Dictionary::from_pairs([("hello", "ahoj"), ("world", "svět")]);
        let dict = MtSimulator::with_dictionary(
            MtSimConfig {
                transform: MtTransform::Dictionary,
                ..MtSimConfig::default()
            },
            Some(Dictionary::from_pairs([("hello", "ahoj")])),
        )
        .unwrap();
        assert_eq!(dict.transform("hello world"), "ahoj world");
        assert_eq!(d.translate("Hello, big world."), "Ahoj, big svět.");
        let missing = MtSimulator::new(MtSimConfig {
            transform: MtTransform::Dictionary,
            ..MtSimConfig::default()
        });
        assert!(matches!(missing, Err(Error::Config(_))));
    }

    #[test]
    fn latency_distribution_matches() {
        let cfg = MtSimConfig {
            base_ms: 200.0,
            per_token_ms: 5.0,
            jitter_std_ms: 20.0,
            seed: 3,
            ..MtSimConfig::default()
        };
        let mut sim = MtSimulator::new(cfg).unwrap();
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|i| sim.draw_elapsed(i % 10)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let expected = 200.0 + 5.0 * 4.5;
        assert!(
            (mean - expected).abs() <= 3.0 * 20.0 / (n as f64).sqrt(),
            "{mean}"
        );
    }
}
