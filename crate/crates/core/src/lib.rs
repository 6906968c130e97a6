//! Multi-modal novel class discovery.
//!
//! Member encoders turn each modality of an object into a feature vector, a
//! leader fuses them with two-stage multi-head self-attention, and training
//! combines cross-entropy, a one-step TD objective and a contrastive term.
//! Unlabeled objects receive write-once pseudo-labels from DBSCAN runs whose
//! constraints loosen every epoch. [`evalkit`] scores the result with open-set
//! retrieval metrics and Hungarian-matched clustering accuracy.

pub mod numkit;
pub mod rng;
pub mod datagen;
pub mod agents;
pub mod policy;
pub mod stlclu;
pub mod evalkit;
pub mod trainer;

pub use agents::{AgentConfig, Model};
pub use datagen::{
    drop_modalities, generate_dataset, load_dataset, save_dataset, DataError, Dataset, GeneratorConfig, LabelState,
    ModalitySpec, MultiModalSample, TrainingView,
};
pub use evalkit::{EvalError, EvalReport, Evaluator, RetrievalSummary};
pub use numkit::{NumError, ParamStore, Tape, Tensor};
pub use policy::{LossSwitches, PolicyError};
pub use stlclu::{ClusterError, ClusterParams, Metric, PseudoLabelStore, RelaxationSchedule};
pub use trainer::{EpochEval, EpochRecord, TrainConfig, TrainError, Trainer};

/// Any failure raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
}
