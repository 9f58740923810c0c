//! Hybrid human/machine labeling.
//!
//! A skeptical incremental model works next to a human labeler. While the
//! human is in command the model challenges labels it disagrees with; once
//! it has earned trust it labels records itself, calling the human back on
//! low belief or random checks, and steps down when it becomes unreliable.

pub mod engine;
pub mod error;
pub mod explain;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod record;
pub mod session;
pub mod sim;
pub mod stream;

pub use engine::{ChallengeResponse, CheckMode, CriticalReason, Engine, EngineConfig, Outcome, Phase, Prompt};
pub use error::{Error, Result};
pub use learner::{LabelDistribution, Learner, Model, ModelKind};
pub use metrics::{Agent, CallbackKind, DecidedBy, DecisionEvent, Evidence, FadingConfig, PhaseTag};
pub use record::{FeatureKind, FeatureSpec, FeatureValue, LabeledRecord, Record, Schema};
pub use oracle::{ConsentPolicy, NoticePolicy, SimulatedUser, SimulatedUserConfig};
pub use session::{replay, ClientEvent, JournalEntry, MetricsView, Replay, Session, SessionConfig};
pub use sim::{simulate, ExperimentConfig, SeedSummary, Summary};
pub use stream::{gen_blobs, BlobSpec, DriftSpec};
