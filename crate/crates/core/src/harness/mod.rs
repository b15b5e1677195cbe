//! Training orchestration: run configuration, model layout for the
//! independent and shared regimes, training with model selection,
//! evaluation, prediction, the step sweep and the gradient check.

mod config;
mod eval;
mod gradcheck;
mod model;
mod prepare;
mod sweep;
mod train;

pub use config::{OptimizerConfig, Regime, RunConfig, Task, TaskWeights};
pub use eval::{
    data_version, evaluate, evaluate_kb, evaluate_predictions, kb_predictions, predict, CaptionReport, EvalMetadata,
    EvalReport, InstancePrediction, RelationshipReport, ScenePrediction, SplitName,
};
pub use gradcheck::{check_gradients, GradcheckConfig, GradcheckSummary, GRADCHECK_TOLERANCE};
pub use model::{AffordanceModel, HeadSet, SentencePair, TaskSet, Unit, CHECKPOINT_FORMAT};
pub use prepare::{build_vocabularies, prepare_all, prepare_scene, ActionTargets, PreparedScene, SentenceRefs};
pub use sweep::{sweep_steps, SweepResult, SweepRun, DEFAULT_SWEEP};
pub use train::{relationship_accuracy, train, train_prepared, LogEvent, TrainOutcome, UnitOutcome, UnitStatus};
