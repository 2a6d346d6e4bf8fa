//! Closed-form fitness landscapes.
//!
//! These stand in for trained accuracy so the search logic can be checked
//! exactly. Noise is a pure function of `(noise_seed, genome, repeat_index)`.

use super::{Backend, BackendError, BackendReply, EvalRequest, FitnessRecord, Source};
use crate::genome::{infer_shapes, Genome, ImageShape};
use crate::rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Peaks at `peak_length`, falling linearly by 1/span per layer.
    LengthPeak,
    /// Logistic in log10 of the parameter count.
    ParamsLogistic,
    /// Constant `plateau_value`.
    Plateau,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSpec {
    pub family: Family,
    #[serde(default)]
    pub peak_length: usize,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub noise_seed: u64,
    /// Length normalizer of `length_peak`.
    #[serde(default = "default_span")]
    pub span: usize,
    #[serde(default = "default_plateau")]
    pub plateau_value: f64,
    #[serde(default = "default_midpoint")]
    pub midpoint_params: f64,
    #[serde(default = "default_steepness")]
    pub steepness: f64,
}

fn default_span() -> usize {
    24
}
fn default_plateau() -> f64 {
    0.5
}
fn default_midpoint() -> f64 {
    1e5
}
fn default_steepness() -> f64 {
    2.0
}

impl SurrogateSpec {
    fn base(family: Family) -> Self {
        SurrogateSpec {
            family,
            peak_length: 0,
            noise_scale: 0.0,
            noise_seed: 0,
            span: default_span(),
            plateau_value: default_plateau(),
            midpoint_params: default_midpoint(),
            steepness: default_steepness(),
        }
    }

    pub fn length_peak(peak_length: usize) -> Self {
        SurrogateSpec {
            peak_length,
            ..Self::base(Family::LengthPeak)
        }
    }

    pub fn plateau(value: f64) -> Self {
        SurrogateSpec {
            plateau_value: value,
            ..Self::base(Family::Plateau)
        }
    }

    pub fn params_logistic(midpoint_params: f64, steepness: f64) -> Self {
        SurrogateSpec {
            midpoint_params,
            steepness,
            ..Self::base(Family::ParamsLogistic)
        }
    }

    pub fn with_noise(mut self, scale: f64, seed: u64) -> Self {
        self.noise_scale = scale;
        self.noise_seed = seed;
        self
    }

    pub fn with_span(mut self, span: usize) -> Self {
        self.span = span;
        self
    }

    /// Noise-free value of the landscape.
    pub fn clean_value(&self, effective_length: usize, num_params: u64) -> f64 {
        match self.family {
            Family::LengthPeak => {
                let dist = effective_length.abs_diff(self.peak_length) as f64;
                1.0 - dist / self.span.max(1) as f64
            }
            Family::ParamsLogistic => {
                let x = (num_params.max(1) as f64).log10() - self.midpoint_params.max(1.0).log10();
                1.0 / (1.0 + (-self.steepness * x).exp())
            }
            Family::Plateau => self.plateau_value,
        }
    }

    /// Deterministic noise in [-noise_scale, noise_scale].
    pub fn noise(&self, genome: &Genome, repeat_index: u32) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        let domain = format!("surrogate-noise:{}", genome.fingerprint());
        let bits = rng::derive_u64(self.noise_seed, &domain, &[u64::from(repeat_index)]);
        let unit = (bits >> 11) as f64 / (1u64 << 53) as f64;
        self.noise_scale * (2.0 * unit - 1.0)
    }

    fn score(&self, genome: &Genome, num_params: u64, repeat_index: u32) -> f64 {
        let raw = self.clean_value(genome.effective_length(), num_params) + self.noise(genome, repeat_index);
        raw.clamp(0.0, 1.0)
    }
}

/// Scores `genome` on the landscape; out-of-shape genomes get 0.
pub fn surrogate_fitness(spec: &SurrogateSpec, genome: &Genome, input: ImageShape, repeat_index: u32) -> FitnessRecord {
    match infer_shapes(genome, input) {
        Err(_) => FitnessRecord::out_of_shape(Source::Surrogate),
        Ok(report) => {
            let fitness = spec.score(genome, report.total_params, repeat_index);
            FitnessRecord {
                fitness,
                loss: Some(1.0 - fitness),
                num_params: report.total_params,
                eval_seconds: 0.0,
                source: Source::Surrogate,
                out_of_shape: false,
                error: None,
            }
        }
    }
}

pub struct SurrogateBackend {
    spec: SurrogateSpec,
    input: ImageShape,
}

impl SurrogateBackend {
    pub fn new(spec: SurrogateSpec, input: ImageShape) -> Self {
        SurrogateBackend { spec, input }
    }
}

impl Backend for SurrogateBackend {
    fn source(&self) -> Source {
        Source::Surrogate
    }

    fn identity(&self) -> String {
        format!(
            "surrogate:{}",
            serde_json::to_string(&self.spec).expect("spec serializes")
        )
    }

    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<BackendReply, BackendError> {
        let record = surrogate_fitness(&self.spec, request.genome, self.input, request.repeat_index);
        Ok(BackendReply {
            fitness: record.fitness,
            loss: record.loss,
            num_params: record.num_params,
            eval_seconds: record.eval_seconds,
            error: None,
        })
    }
}
