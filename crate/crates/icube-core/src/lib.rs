//! Interactive identification of treated units with positive effects under
//! randomized experiments, with masked exploration and error control.

pub mod baselines;
pub mod data;
pub mod error;
pub mod masking;
pub mod metrics;
pub mod models;
pub mod normal;
pub mod procedures;
pub mod rng;
pub mod strategy;
pub mod subgroup;
pub mod sweep;

pub use data::{Dataset, EffectModel, GroundTruth, Grouping, Labels, TruthRecord};
pub use error::{Error, Result};
pub use masking::{
    AuditEntry, AuditLog, ExplorerView, Field, MaskingMode, PerMember, Receipt, Role, Session, SessionConfig,
    SignLedger, UnitSnapshot, ViewSnapshot,
};
pub use metrics::{evaluate, Evaluation, NullKind, Summary};
pub use models::{FittedModel, LearnerKind, LearnerSpec};
pub use procedures::{run_procedure, HalfRun, Method, ProcedureSpec, RunReport, UnitLevel};
pub use strategy::{Strategy, StrategyKind, StrategySpec};
pub use subgroup::PValueMethod;
pub use sweep::{run_sweep, Design, SweepMethod, SweepResult, SweepRow, SweepSpec};
