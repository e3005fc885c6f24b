//! Zero-shot room labelling for 3D scene graphs.
//!
//! Rooms are labelled from the objects they contain. For each room the few
//! object labels with the lowest co-occurrence entropy are put into a query
//! sentence, one sentence per candidate room label:
//!
//! ```text
//! A room containing toilet, shower and sink is called a bathroom.
//! ```
//!
//! Every candidate is scored by a language model (sum of token log
//! probabilities) and the highest-scoring room label wins. No training is
//! involved; any room or object vocabulary that can be written as text works.
//!
//! Modules, in pipeline order:
//!
//! - [`scene`]: scene-graph types and validation
//! - [`ingest`]: scene-file parsing and preprocessing
//! - [`cooccurrence`]: object/room distributions, entropy, object selection
//! - [`querygen`]: sentence templates
//! - [`scoring`]: the sentence-scorer trait and its backends
//! - [`inference`]: per-room classification
//! - [`evaluation`]: accuracy reports

pub mod cooccurrence;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod ingest;
pub mod querygen;
pub mod scene;
pub mod scoring;

pub use error::{Error, Result, ScoreError};
pub use scene::{BoundingBox, Label, LabelSpace, ObjectNode, RoomNode, SceneGraph};
