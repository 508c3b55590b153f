//! Service names, cascades and the newline-delimited JSON wire format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServiceKind {
    Asr,
    Punct,
    /// Streaming translation of a punctuated hypothesis stream.
    Mt,
    /// Raw batch translation: one data message carries newline-separated
    /// segments and is answered by one message with their translations.
    MtBatch,
}

impl ServiceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Asr => "asr",
            ServiceKind::Punct => "punct",
            ServiceKind::Mt => "mt",
            ServiceKind::MtBatch => "mtbatch",
        }
    }

    fn has_target(self) -> bool {
        matches!(self, ServiceKind::Mt | ServiceKind::MtBatch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServiceName {
    pub kind: ServiceKind,
    pub source_lang: String,
    /// Empty for `asr` and `punct`.
    pub target_lang: String,
}

fn valid_lang(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl ServiceName {
    pub fn new(kind: ServiceKind, source_lang: &str, target_lang: &str) -> Result<Self> {
        let ok = valid_lang(source_lang)
            && if kind.has_target() {
                valid_lang(target_lang)
            } else {
                target_lang.is_empty()
            };
        if !ok {
            return Err(Error::MalformedService(format!(
                "{}:{source_lang}-{target_lang}",
                kind.as_str()
            )));
        }
        Ok(ServiceName {
            kind,
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
        })
    }

    pub fn asr(lang: &str) -> Result<Self> {
        Self::new(ServiceKind::Asr, lang, "")
    }

    pub fn punct(lang: &str) -> Result<Self> {
        Self::new(ServiceKind::Punct, lang, "")
    }

    pub fn mt(source: &str, target: &str) -> Result<Self> {
        Self::new(ServiceKind::Mt, source, target)
    }

    pub fn mt_batch(source: &str, target: &str) -> Result<Self> {
        Self::new(ServiceKind::MtBatch, source, target)
    }

    /// Language of the stream this service consumes.
    pub fn input_lang(&self) -> &str {
        &self.source_lang
    }

    /// Language of the stream this service produces.
    pub fn output_lang(&self) -> &str {
        if self.kind.has_target() {
            &self.target_lang
        } else {
            &self.source_lang
        }
    }

    /// The same language pair with a different kind (`mt` <-> `mtbatch`).
    pub fn with_kind(&self, kind: ServiceKind) -> Result<Self> {
        Self::new(kind, &self.source_lang, &self.target_lang)
    }
}

impl fmt::Display for ServiceName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.source_lang)?;
        if self.kind.has_target() {
            write!(f, "-{}", self.target_lang)?;
        }
        Ok(())
    }
}

impl FromStr for ServiceName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let malformed = || Error::MalformedService(s.to_string());
        let (kind, langs) = s.split_once(':').ok_or_else(malformed)?;
        let kind = match kind {
            "asr" => ServiceKind::Asr,
            "punct" => ServiceKind::Punct,
            "mt" => ServiceKind::Mt,
            "mtbatch" => ServiceKind::MtBatch,
            _ => return Err(malformed()),
        };
        let (src, tgt) = if kind.has_target() {
            langs.split_once('-').ok_or_else(malformed)?
        } else {
            (langs, "")
        };
        Self::new(kind, src, tgt).map_err(|_| malformed())
    }
}

/// An ordered chain of services: recognizer, then punctuator, then one or
/// more translators, with each stage consuming the previous stage's output
/// language. A batch translation endpoint may only be requested alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeSpec {
    pub services: Vec<ServiceName>,
}

impl CascadeSpec {
    pub fn new(services: Vec<ServiceName>) -> Result<Self> {
        if services.is_empty() {
            return Err(Error::IncompatibleCascade);
        }
        let batch = services.iter().any(|s| s.kind == ServiceKind::MtBatch);
        if batch && services.len() > 1 {
            return Err(Error::IncompatibleCascade);
        }
        for pair in services.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let ordered =
                a.kind < b.kind || (a.kind == ServiceKind::Mt && b.kind == ServiceKind::Mt);
            if !ordered || a.output_lang() != b.input_lang() {
                return Err(Error::IncompatibleCascade);
            }
        }
        Ok(CascadeSpec { services })
    }

    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let services = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<_>>>()?;
        Self::new(services)
    }

    pub fn names(&self) -> Vec<String> {
        self.services.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for CascadeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    Offer,
    Request,
    Accept,
    Reject,
    #[default]
    Data,
    Eos,
    Error,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Offer => "offer",
            MessageType::Request => "request",
            MessageType::Accept => "accept",
            MessageType::Reject => "reject",
            MessageType::Data => "data",
            MessageType::Eos => "eos",
            MessageType::Error => "error",
        }
    }
}

/// One protocol line. Absent fields are omitted on the wire.
///
/// Besides the core fields, `ts_ms` carries the virtual emission time of a
/// data message, `index`/`version` tag translated sentences, and
/// `elapsed_ms` reports the processing time of a translated batch.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_prefix: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl WireMessage {
    fn of(kind: MessageType) -> Self {
        WireMessage {
            kind,
            ..WireMessage::default()
        }
    }

    pub fn offer(service: &ServiceName) -> Self {
        WireMessage {
            service: Some(service.to_string()),
            ..Self::of(MessageType::Offer)
        }
    }

    pub fn request(cascade: &CascadeSpec) -> Self {
        WireMessage {
            cascade: Some(cascade.names()),
            ..Self::of(MessageType::Request)
        }
    }

    pub fn accept() -> Self {
        Self::of(MessageType::Accept)
    }

    pub fn reject(message: impl Into<String>) -> Self {
        WireMessage {
            message: Some(message.into()),
            ..Self::of(MessageType::Reject)
        }
    }

    pub fn data(session: &str, seq: u64, text: impl Into<String>) -> Self {
        WireMessage {
            session: Some(session.to_string()),
            seq: Some(seq),
            text: Some(text.into()),
            ..Self::of(MessageType::Data)
        }
    }

    pub fn eos(session: &str) -> Self {
        WireMessage {
            session: Some(session.to_string()),
            ..Self::of(MessageType::Eos)
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        WireMessage {
            message: Some(message.into()),
            ..Self::of(MessageType::Error)
        }
    }

    pub fn with_session(mut self, session: &str) -> Self {
        self.session = Some(session.to_string());
        self
    }

    pub fn with_stable_prefix(mut self, stable_prefix: usize) -> Self {
        self.stable_prefix = Some(stable_prefix);
        self
    }

    pub fn with_ts(mut self, ts_ms: u64) -> Self {
        self.ts_ms = Some(ts_ms);
        self
    }

    /// Serializes to a single line without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    /// Parses one line and checks the fields its type requires.
    pub fn parse_line(line: &str) -> Result<Self> {
        let msg = Self::decode(line)?;
        msg.validate()?;
        Ok(msg)
    }

    /// Parses one line without per-type validation.
    pub fn decode(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let missing = |field: &str| {
            Err(Error::Protocol(format!(
                "{} message requires \"{field}\"",
                self.kind.as_str()
            )))
        };
        match self.kind {
            MessageType::Offer if self.service.is_none() => missing("service"),
            MessageType::Request if self.cascade.as_ref().is_none_or(Vec::is_empty) => {
                missing("cascade")
            }
            MessageType::Data if self.session.is_none() => missing("session"),
            MessageType::Data if self.seq.is_none() => missing("seq"),
            MessageType::Data if self.text.is_none() => missing("text"),
            MessageType::Eos if self.session.is_none() => missing("session"),
            _ => Ok(()),
        }
    }

    pub fn session(&self) -> Option<&str> {
        self.session.as_deref()
    }

    pub fn text(&self) -> &str {
        self.text.as_deref().unwrap_or("")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_and_parse() {
        for s in ["asr:en", "punct:de", "mt:en-cs", "mtbatch:en-de"] {
            assert_eq!(s.parse::<ServiceName>().unwrap().to_string(), s);
        }
        for bad in [
            "mt:en",
            "asr:",
            "asr:en-cs",
            "tts:en",
            "mt:-cs",
            "asr",
            "asr:e n",
            "",
        ] {
            let err = bad.parse::<ServiceName>().unwrap_err();
            assert!(
                err.to_string().contains("malformed service"),
                "{bad}: {err}"
            );
        }
    }

    #[test]
    fn cascade_compatibility() {
        assert!(CascadeSpec::parse(&["asr:en", "punct:en", "mt:en-cs"]).is_ok());
        assert!(CascadeSpec::parse(&["asr:en", "mt:en-de"]).is_ok());
        assert!(CascadeSpec::parse(&["mt:en-cs", "mt:cs-de"]).is_ok());
        assert!(CascadeSpec::parse(&["mtbatch:en-cs"]).is_ok());
        for bad in [
            &["mt:en-cs", "punct:en"][..],
            &["asr:en", "punct:de"],
            &["asr:en", "asr:en"],
            &["punct:en", "mt:de-cs"],
            &["asr:en", "mtbatch:en-cs"],
            &[],
        ] {
            let err = CascadeSpec::parse(bad).unwrap_err();
            assert_eq!(err.to_string(), "incompatible cascade", "{bad:?}");
        }
    }

    #[test]
    fn bit_exact_data_line() {
        let msg = WireMessage::data("s1", 4, "hello world").with_stable_prefix(1);
        let line = msg.to_line();
        assert_eq!(
            line,
            r#"{"type":"data","session":"s1","seq":4,"text":"hello world","stable_prefix":1}"#
        );
        assert_eq!(WireMessage::parse_line(&line).unwrap(), msg);
    }

    #[test]
    fn validation() {
        assert!(WireMessage::parse_line(r#"{"type":"offer"}"#).is_err());
        assert!(WireMessage::parse_line(r#"{"type":"request","cascade":[]}"#).is_err());
        assert!(WireMessage::parse_line(r#"{"type":"data","session":"s1","text":"x"}"#).is_err());
        assert!(WireMessage::parse_line(r#"{"type":"eos"}"#).is_err());
        assert!(WireMessage::parse_line(
            r#"{"type":"data","session":"s1","seq":1,"text":"x","bogus":1}"#
        )
        .is_err());
        assert!(WireMessage::parse_line(r#"{"type":"shout"}"#).is_err());
        assert!(WireMessage::parse_line("not json").is_err());
        assert!(WireMessage::parse_line(r#"{"type":"eos","session":"s9"}"#).is_ok());
    }

    proptest! {
        #[test]
        fn service_round_trip(kind in 0usize..4, src in "[a-z]{1,3}", tgt in "[a-z]{1,3}") {
            let kind = [ServiceKind::Asr, ServiceKind::Punct, ServiceKind::Mt, ServiceKind::MtBatch][kind];
            let tgt = if kind.has_target() { tgt } else { String::new() };
            let name = ServiceName::new(kind, &src, &tgt).unwrap();
            prop_assert_eq!(name.to_string().parse::<ServiceName>().unwrap(), name);
        }

        #[test]
        fn one_line_per_message(text in "\\PC*", seq in any::<u64>()) {
            let msg = WireMessage::data("s", seq, text.clone());
            let line = msg.to_line();
            prop_assert!(!line.contains('\n'));
            prop_assert_eq!(WireMessage::parse_line(&line).unwrap(), msg);
        }
    }
}
