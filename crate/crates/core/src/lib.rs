//! Knowledge-grounded multimodal dialog response generation at desk scale.
//!
//! The pipeline runs context → attribute and relation knowledge acquisition →
//! composition into `T_c` → semantic projection and regularization → decoding with
//! a knowledge sub-layer and semantic enhancement. Everything sits on a small
//! reverse-mode autograd over `f64` matrices in [`tensor`].

pub mod acquisition;
pub mod checkpoint;
pub mod composer;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod kb;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod regularizer;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod train;

pub use acquisition::{AcquiredKnowledge, AcquisitionConfig, AttributeKnowledge, DialogContext, RelationTuple};
pub use composer::{ComposedRepresentation, ContextInputs};
pub use config::TrainingConfig;
pub use corpus::CorpusRecord;
pub use decoder::Strategy;
pub use kb::{AttributeValuePair, Entity, KnowledgeBase, KnowledgeGraph, Triplet};
pub use metrics::MetricsReport;
pub use model::{Model, ModelShape};
pub use pipeline::{DialogPair, Example, Pipeline};
pub use tensor::{Tape, Tensor, Var};
pub use text::Vocabulary;
