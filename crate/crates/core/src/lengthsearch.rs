//! Search for the architecture-length space that suits a dataset.
//!
//! The length axis `[0, N]` is cut into `N / k` spaces of width `k`. One
//! standard candidate sits at the midpoint of each space, plus a dense-only
//! "zero" candidate. Each candidate is built and evaluated `repeats` times
//! with fresh hyperparameters, and the space with the best mean fitness wins,
//! except that a smaller space whose mean lies within `alpha` of the best is
//! preferred.

use crate::config::EvolutionConfig;
use crate::fitness::{EvalJob, Evaluator, FitnessRecord};
use crate::genome::{GeneMenu, Genome, LayerGene};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LengthSearchError {
    #[error("invalid partition of {max_layers} layers into spaces of width {width}: {reason}")]
    InvalidPartition {
        max_layers: usize,
        width: usize,
        reason: &'static str,
    },
    #[error("no candidate reached the fitness floor; no optimal space")]
    NoOptimalSpace(Box<Vec<SpaceResult>>),
}

/// An interval of effective lengths and its representative length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthSpace {
    /// 1-based position on the length axis; 0 is the dense-only sentinel.
    pub index: usize,
    pub min: usize,
    pub max: usize,
    pub candidate_length: usize,
}

impl LengthSpace {
    /// The `[0-0]` space of the dense-only candidate.
    pub const ZERO: LengthSpace = LengthSpace {
        index: 0,
        min: 0,
        max: 0,
        candidate_length: 0,
    };

    /// Space `i` (1-based) of width `width`: `[width(i-1), width i]`.
    pub fn nth(i: usize, width: usize) -> Self {
        let min = width * (i - 1);
        LengthSpace {
            index: i,
            min,
            max: width * i,
            candidate_length: min + width / 2,
        }
    }

    /// A space given by its bounds, e.g. from the command line.
    pub fn from_bounds(min: usize, max: usize, width: usize) -> Self {
        if max == 0 {
            return Self::ZERO;
        }
        LengthSpace {
            index: max.div_ceil(width.max(1)),
            min,
            max,
            candidate_length: (min + max) / 2,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max == 0
    }
}

impl fmt::Display for LengthSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}-{}]", self.min, self.max)
    }
}

/// Cuts `[0, max_layers]` into spaces of `width` layers.
pub fn partition(max_layers: usize, width: usize) -> Result<Vec<LengthSpace>, LengthSearchError> {
    let fail = |reason| LengthSearchError::InvalidPartition {
        max_layers,
        width,
        reason,
    };
    if width < 2 {
        return Err(fail("width must be at least 2"));
    }
    if !width.is_multiple_of(2) {
        return Err(fail("width must be even"));
    }
    if max_layers < width {
        return Err(fail("max layers must be at least the width"));
    }
    if !max_layers.is_multiple_of(width) {
        return Err(fail("width must divide max layers"));
    }
    Ok((1..=max_layers / width).map(|i| LengthSpace::nth(i, width)).collect())
}

fn head<R: Rng + ?Sized>(menu: &GeneMenu, num_classes: u32, rng: &mut R) -> Vec<LayerGene> {
    let hidden = rng.gen_range(1..=3);
    menu.head(hidden, num_classes, rng)
}

/// Standard candidate of `space`: alternating Conv/Pool blocks up to the
/// candidate length, then 1-3 dense units and the classifier.
pub fn make_candidate<R: Rng + ?Sized>(space: &LengthSpace, menu: &GeneMenu, num_classes: u32, rng: &mut R) -> Genome {
    let n = space.candidate_length;
    let mut blocks: Vec<Vec<LayerGene>> = (0..n / 2).map(|_| vec![menu.conv(rng), menu.pool(rng)]).collect();
    if n % 2 == 1 {
        blocks.push(vec![menu.conv(rng)]);
    }
    let head = head(menu, num_classes, rng);
    Genome::new(blocks, head)
}

/// Dense-only candidate.
pub fn zero_candidate<R: Rng + ?Sized>(menu: &GeneMenu, num_classes: u32, rng: &mut R) -> Genome {
    make_candidate(&LengthSpace::ZERO, menu, num_classes, rng)
}

/// Repeated evaluations of one space's candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceResult {
    pub space: LengthSpace,
    pub fitnesses: Vec<f64>,
    pub losses: Vec<Option<f64>>,
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub records: Vec<FitnessRecord>,
    /// Candidate genome of each repeat.
    pub candidates: Vec<Genome>,
}

impl SpaceResult {
    pub fn new(space: LengthSpace, candidates: Vec<Genome>, records: Vec<FitnessRecord>) -> Self {
        let fitnesses: Vec<f64> = records.iter().map(|r| r.fitness).collect();
        let losses = records.iter().map(|r| r.loss).collect();
        let mean_fitness = if fitnesses.is_empty() {
            0.0
        } else {
            fitnesses.iter().sum::<f64>() / fitnesses.len() as f64
        };
        let best_fitness = fitnesses.iter().copied().fold(0.0, f64::max);
        SpaceResult {
            space,
            fitnesses,
            losses,
            mean_fitness,
            best_fitness,
            records,
            candidates,
        }
    }

    /// Result carrying only fitness values, for selection tests and tools.
    pub fn from_fitnesses(space: LengthSpace, fitnesses: &[f64]) -> Self {
        let records = fitnesses
            .iter()
            .map(|&fitness| FitnessRecord {
                fitness,
                loss: None,
                num_params: 0,
                eval_seconds: 0.0,
                source: crate::fitness::Source::Surrogate,
                out_of_shape: false,
                error: None,
            })
            .collect();
        Self::new(space, Vec::new(), records)
    }
}

/// The selected space widened by the margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimalSpace {
    pub selected: Option<LengthSpace>,
    pub margin: usize,
    pub effective_max_length: usize,
}

impl OptimalSpace {
    pub fn new(selected: LengthSpace, margin: usize) -> Self {
        OptimalSpace {
            selected: Some(selected),
            margin,
            effective_max_length: selected.max + margin,
        }
    }

    pub fn none(margin: usize) -> Self {
        OptimalSpace {
            selected: None,
            margin,
            effective_max_length: 0,
        }
    }
}

impl fmt::Display for OptimalSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.selected {
            Some(s) => write!(f, "{s} (effective max {})", self.effective_max_length),
            None => write!(f, "no optimal space"),
        }
    }
}

fn smaller(a: &LengthSpace, b: &LengthSpace) -> Ordering {
    (a.min, a.max, a.index).cmp(&(b.min, b.max, b.index))
}

/// Picks a space by mean fitness.
///
/// Returns `None` when the best mean is below `floor`. Otherwise returns the
/// smallest space whose mean is at least `floor` and less than `alpha` below
/// the best mean (the best space itself always qualifies).
pub fn select_space(results: &[SpaceResult], alpha: f64, floor: f64) -> Option<LengthSpace> {
    let best = results.iter().map(|r| r.mean_fitness).fold(f64::NEG_INFINITY, f64::max);
    if results.is_empty() || best < floor {
        return None;
    }
    results
        .iter()
        .filter(|r| r.mean_fitness >= floor)
        .filter(|r| r.mean_fitness == best || best - r.mean_fitness < alpha)
        .map(|r| r.space)
        .min_by(smaller)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSearchReport {
    pub optimal: OptimalSpace,
    pub alpha: f64,
    pub floor: f64,
    pub results: Vec<SpaceResult>,
}

/// All spaces the search probes: the zero sentinel then the partition.
pub fn probed_spaces(cfg: &EvolutionConfig) -> Result<Vec<LengthSpace>, LengthSearchError> {
    let mut spaces = vec![LengthSpace::ZERO];
    spaces.extend(partition(cfg.max_layers, cfg.space_width)?);
    Ok(spaces)
}

/// Evaluates every probed space and selects the optimal one.
pub fn run_length_search(
    cfg: &EvolutionConfig,
    evaluator: &Evaluator,
) -> Result<LengthSearchReport, LengthSearchError> {
    let spaces = probed_spaces(cfg)?;
    let num_classes = evaluator.task().num_classes;

    let candidates: Vec<Vec<Genome>> = spaces
        .iter()
        .map(|space| {
            (0..cfg.repeats)
                .map(|r| {
                    let mut rng = rng::stream(cfg.master_seed, "length-candidate", &[space.index as u64, r as u64]);
                    make_candidate(space, &cfg.menu, num_classes, &mut rng)
                })
                .collect()
        })
        .collect();

    let jobs: Vec<EvalJob<'_>> = candidates
        .iter()
        .flat_map(|per_space| {
            per_space.iter().enumerate().map(|(r, genome)| EvalJob {
                genome,
                budget: &cfg.length_budget,
                repeat_index: r as u32,
            })
        })
        .collect();
    let mut records = evaluator.evaluate_batch(&jobs).into_iter();

    let results: Vec<SpaceResult> = spaces
        .iter()
        .zip(candidates)
        .map(|(space, genomes)| {
            let recs: Vec<FitnessRecord> = records.by_ref().take(genomes.len()).collect();
            SpaceResult::new(*space, genomes, recs)
        })
        .collect();

    let floor = cfg.floor_for(num_classes);
    match select_space(&results, cfg.alpha, floor) {
        Some(space) => Ok(LengthSearchReport {
            optimal: OptimalSpace::new(space, cfg.margin),
            alpha: cfg.alpha,
            floor,
            results,
        }),
        None => Err(LengthSearchError::NoOptimalSpace(Box::new(results))),
    }
}
