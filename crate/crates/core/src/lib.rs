//! Synthetic translation data distillation and reward shaping.
//!
//! The crate covers the data side of training a translation model from a
//! stronger teacher:
//!
//! * [`corpus`]: ingest monolingual text, bucket by length, sample source pools.
//! * [`prompting`]: the translation prompt and the language registry.
//! * [`backend`]: generation/scoring services, a deterministic mock, and the HTTP protocol.
//! * [`metrics`]: ChrF, MQM span weights, reward rescaling.
//! * [`distill`]: greedy-vs-sample prefilter, best-of-N QE selection, formatting filter, dataset emission.
//! * [`rewards`]: span-level token rewards, broadcast sequence rewards, batch-normalized advantages.
//! * [`mixture`]: token-proportional training mixtures.
//! * [`evalprep`]: human evaluation chunking, rater assignment and MQM report tables.

pub mod backend;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod evalprep;
pub mod jsonl;
pub mod metrics;
pub mod mixture;
pub mod prompting;
pub mod rewards;
pub mod tokenize;

pub use backend::{Backend, GenRequest, MockBackend, ScoreRequest, SpanJudgement};
pub use corpus::{LangPair, Segment};
pub use error::{Error, Result};
pub use metrics::{MqmWeightTable, RescaleTransform};
pub use rewards::{AdvantageBatch, Severity, SpanAnnotation};
pub use tokenize::{Tokenizer, WhitespacePunctTokenizer};
