//! Cascaded simultaneous speech translation over a worker mediator.
//!
//! The pipeline runs a simulated incremental recognizer, a sliding-window
//! punctuator and a retranslating MT wrapper as independent workers wired
//! together by the [`mediator`]. The [`eval`] module holds the measurement
//! suite used to choose between candidate systems.

pub mod clock;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod mediator;
pub mod mtwrapper;
pub mod peer;
pub mod protocol;
pub mod punctuation;
pub mod session;
pub mod simworkers;
pub mod stream;
pub mod text;
pub mod types;
pub mod workers;

pub use error::{Error, Result};
pub use types::{Document, HypothesisUpdate, Sentence, SentenceStatus, Token};
