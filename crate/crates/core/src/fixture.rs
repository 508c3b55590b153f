//! Document directories on disk.
//!
//! ```text
//! <doc>/meta.toml            doc_id = ..., domain = ..., source_lang = en
//! <doc>/transcript.tsv       start_ms <TAB> end_ms <TAB> token
//! <doc>/reference.en.txt     gold transcript, one sentence per line
//! <doc>/reference.cs.txt     a reference translation (more: reference.cs.1.txt, ...)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Document, Sentence, SentenceStatus, Token};

pub const META_FILE: &str = "meta.toml";
pub const TRANSCRIPT_FILE: &str = "transcript.tsv";

/// Parses flat `key = value` lines. Blank lines and `#` comments are
/// skipped; surrounding double quotes on values are removed.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(path, i + 1, format!("expected key=value, got {line:?}"))
        })?;
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        out.push((key.trim().to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn parse_transcript(text: &str, path: &Path) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut last_start = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                i + 1,
                "expected start_ms, end_ms, token",
            ));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::parse(path, i + 1, format!("bad millisecond value {s:?}")))
        };
        let (start, end) = (num(cols[0])?, num(cols[1])?);
        if start < last_start {
            return Err(Error::parse(path, i + 1, "tokens are not time-ordered"));
        }
        last_start = start;
        let token = Token::timed(cols[2].trim(), start, end)
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        tokens.push(token);
    }
    Ok(tokens)
}

pub fn render_transcript(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(|t| {
            format!(
                "{}\t{}\t{}\n",
                t.start_ms.unwrap_or(0),
                t.end_ms.unwrap_or(0),
                t.text
            )
        })
        .collect()
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

pub fn load_document(dir: &Path) -> Result<Document> {
    let meta_path = dir.join(META_FILE);
    let meta: BTreeMap<String, String> =
        parse_key_values(&fs::read_to_string(&meta_path)?, &meta_path)?
            .into_iter()
            .collect();
    let doc_id = meta.get("doc_id").cloned().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let domain = meta.get("domain").cloned().unwrap_or_default();
    if domain.is_empty() {
        return Err(Error::parse(&meta_path, 0, "missing domain"));
    }
    let source_lang = meta
        .get("source_lang")
        .cloned()
        .unwrap_or_else(|| "en".to_string());

    let transcript_path = dir.join(TRANSCRIPT_FILE);
    let transcript = parse_transcript(&fs::read_to_string(&transcript_path)?, &transcript_path)?;
    if transcript.is_empty() {
        return Err(Error::parse(&transcript_path, 0, "empty transcript"));
    }

    let mut references: BTreeMap<String, Vec<(usize, Vec<String>)>> = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(rest) = name
            .strip_prefix("reference.")
            .and_then(|r| r.strip_suffix(".txt"))
        else {
            continue;
        };
        let (lang, n) = match rest.split_once('.') {
            Some((lang, n)) => match n.parse::<usize>() {
                Ok(n) => (lang, n),
                Err(_) => continue,
            },
            None => (rest, 0),
        };
        references
            .entry(lang.to_string())
            .or_default()
            .push((n, read_lines(&path)?));
    }
    let mut reference_translations = BTreeMap::new();
    let mut reference_transcript = Vec::new();
    for (lang, mut refs) in references {
        refs.sort_by_key(|(n, _)| *n);
        let refs: Vec<Vec<String>> = refs.into_iter().map(|(_, r)| r).collect();
        if lang == source_lang {
            reference_transcript = refs[0]
                .iter()
                .enumerate()
                .map(|(i, s)| Sentence::new(i, s.clone(), SentenceStatus::Stable))
                .collect();
        } else {
            reference_translations.insert(lang, refs);
        }
    }
    if reference_transcript.is_empty() {
        let text = transcript
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        reference_transcript.push(Sentence::new(0, text, SentenceStatus::Stable));
    }

    Ok(Document {
        doc_id,
        domain,
        source_lang,
        transcript,
        reference_transcript,
        reference_translations,
    })
}

pub fn write_document(doc: &Document, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(META_FILE),
        format!(
            "doc_id = {}\ndomain = {}\nsource_lang = {}\n",
            doc.doc_id, doc.domain, doc.source_lang
        ),
    )?;
    fs::write(
        dir.join(TRANSCRIPT_FILE),
        render_transcript(&doc.transcript),
    )?;
    let gold: String = doc
        .reference_transcript
        .iter()
        .map(|s| format!("{}\n", s.text))
        .collect();
    fs::write(dir.join(format!("reference.{}.txt", doc.source_lang)), gold)?;
    for (lang, refs) in &doc.reference_translations {
        for (i, sentences) in refs.iter().enumerate() {
            let name = if i == 0 {
                format!("reference.{lang}.txt")
            } else {
                format!("reference.{lang}.{i}.txt")
            };
            let body: String = sentences.iter().map(|s| format!("{s}\n")).collect();
            fs::write(dir.join(name), body)?;
        }
    }
    Ok(())
}
