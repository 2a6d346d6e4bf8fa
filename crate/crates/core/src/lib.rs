//! Length-constrained neuroevolution of CNN architectures.
//!
//! The search runs in two stages. [`lengthsearch`] probes one representative
//! architecture per band of lengths and selects the band that fits the
//! dataset best; [`evolution`] then runs a genetic algorithm whose
//! individuals stay inside that band (plus a margin). Fitness comes from a
//! pluggable [`fitness::Backend`]: closed-form surrogate landscapes for
//! verification, or an external training process speaking newline-delimited
//! JSON.

pub mod cli;
pub mod config;
pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod lengthsearch;
pub mod report;
pub mod rng;

pub use config::{EvolutionConfig, InitMode, RunConfigFile, TrainBudget};
pub use evolution::{evolve, Evolution, EvolutionOutcome, Member};
pub use fitness::{EvalTask, Evaluator, FitnessRecord, SurrogateSpec};
pub use genome::{count_params, infer_shapes, Genome, ImageShape, LayerGene};
pub use lengthsearch::{partition, run_length_search, select_space, LengthSpace, OptimalSpace};
