//! Genetic search inside the optimal length space.
//!
//! Each generation evaluates its population, breeds offspring from binary
//! tournament winners with crossover and mutation, and keeps the best
//! `population_size` of parents and offspring. All randomness of pair slot
//! `s` in generation `t` comes from the stream `(master_seed, t, s)`, so a
//! run is a pure function of its inputs when the evaluator is.

pub mod operators;

pub use operators::{
    crossover, crossover_at, environmental_select, init_population, insert_feature_gene, mutate, tournament_select,
    MutationKind, NoCrossoverPoint,
};

use crate::config::{EvolutionConfig, InitMode};
use crate::fitness::{EvalJob, Evaluator, FitnessRecord};
use crate::genome::Genome;
use crate::lengthsearch::OptimalSpace;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("no optimal space selected; evolution needs a length space")]
    NoSpace,
    #[error("checkpoint does not match this run: {0}")]
    Checkpoint(String),
}

/// How an individual came to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Init(InitMode),
    Offspring {
        crossover: bool,
        mutation: Option<MutationKind>,
    },
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Init(InitMode::Standard) => write!(f, "init-standard"),
            Origin::Init(InitMode::Random) => write!(f, "init-random"),
            Origin::Offspring { crossover, mutation } => {
                let m = match mutation {
                    Some(MutationKind::Add) => Some("mutate-add"),
                    Some(MutationKind::Update) => Some("mutate-update"),
                    None => None,
                };
                match (crossover, m) {
                    (true, Some(m)) => write!(f, "crossover+{m}"),
                    (true, None) => write!(f, "crossover"),
                    (false, Some(m)) => write!(f, "{m}"),
                    (false, None) => write!(f, "copy"),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub parents: Vec<u64>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub genome: Genome,
    pub lineage: Lineage,
}

/// An evaluated individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub individual: Individual,
    pub record: FitnessRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: usize,
    pub members: Vec<Member>,
}

/// One row of `history.csv`: a population member in some generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub individual_id: u64,
    pub parent_ids: Vec<u64>,
    pub operator: String,
    pub effective_length: usize,
    pub num_params: u64,
    pub fitness: f64,
    pub loss: Option<f64>,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub rows: Vec<HistoryRow>,
}

impl RunHistory {
    fn log(&mut self, pop: &Population) {
        self.rows.extend(pop.members.iter().map(|m| HistoryRow {
            generation: pop.generation,
            individual_id: m.individual.id,
            parent_ids: m.individual.lineage.parents.clone(),
            operator: m.individual.lineage.origin.to_string(),
            effective_length: m.individual.genome.effective_length(),
            num_params: m.record.num_params,
            fitness: m.record.fitness,
            loss: m.record.loss,
            eval_seconds: m.record.eval_seconds,
        }));
    }

    /// Best fitness of each logged generation, in order.
    pub fn best_per_generation(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((g, best)) if *g == row.generation => *best = best.max(row.fitness),
                _ => out.push((row.generation, row.fitness)),
            }
        }
        out
    }
}

/// Everything needed to continue a run after generation `generation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub generation: usize,
    pub next_id: u64,
    pub master_seed: u64,
    pub space: OptimalSpace,
    pub members: Vec<Member>,
    pub best: Member,
}

pub struct EvolutionOutcome {
    pub best: Member,
    pub history: RunHistory,
    pub population: Population,
}

/// The evolution loop as a resumable state machine.
pub struct Evolution<'a> {
    cfg: EvolutionConfig,
    space: OptimalSpace,
    evaluator: &'a Evaluator,
    population: Population,
    next_id: u64,
    best: Member,
    history: RunHistory,
    stopped: bool,
}

impl<'a> Evolution<'a> {
    /// Builds, evaluates and logs generation 0.
    pub fn start(cfg: &EvolutionConfig, space: OptimalSpace, evaluator: &'a Evaluator) -> Result<Self, EvolutionError> {
        if space.selected.is_none() {
            return Err(EvolutionError::NoSpace);
        }
        let genomes = init_population(
            cfg.init_mode,
            &space,
            cfg.population_size,
            &cfg.menu,
            evaluator.task().num_classes,
            cfg.master_seed,
        );
        let individuals: Vec<Individual> = genomes
            .into_iter()
            .enumerate()
            .map(|(i, genome)| Individual {
                id: i as u64,
                genome,
                lineage: Lineage {
                    parents: Vec::new(),
                    origin: Origin::Init(cfg.init_mode),
                },
            })
            .collect();
        let next_id = individuals.len() as u64;
        let mut members = evaluate(evaluator, cfg, individuals);
        members.sort_by(operators::survival_order);
        let best = members[0].clone();
        let mut evo = Evolution {
            cfg: cfg.clone(),
            space,
            evaluator,
            population: Population { generation: 0, members },
            next_id,
            best,
            history: RunHistory::default(),
            stopped: false,
        };
        evo.after_generation();
        Ok(evo)
    }

    /// Continues from a checkpoint. The history starts empty; generation
    /// numbering continues where the checkpoint left off.
    pub fn resume(
        cfg: &EvolutionConfig,
        checkpoint: Checkpoint,
        evaluator: &'a Evaluator,
    ) -> Result<Self, EvolutionError> {
        if checkpoint.master_seed != cfg.master_seed {
            return Err(EvolutionError::Checkpoint(format!(
                "checkpoint seed {} differs from configured seed {}",
                checkpoint.master_seed, cfg.master_seed
            )));
        }
        if checkpoint.members.len() < 2 {
            return Err(EvolutionError::Checkpoint(
                "population has fewer than two members".into(),
            ));
        }
        let mut evo = Evolution {
            cfg: cfg.clone(),
            space: checkpoint.space,
            evaluator,
            population: Population {
                generation: checkpoint.generation,
                members: checkpoint.members,
            },
            next_id: checkpoint.next_id,
            best: checkpoint.best,
            history: RunHistory::default(),
            stopped: false,
        };
        evo.update_stop();
        Ok(evo)
    }

    fn after_generation(&mut self) {
        self.history.log(&self.population);
        if let Some(top) = self.population.members.first() {
            if operators::survival_order(top, &self.best).is_lt() {
                self.best = top.clone();
            }
        }
        self.update_stop();
    }

    fn update_stop(&mut self) {
        let budget_spent = self.population.generation + 1 >= self.cfg.generations;
        let target_met = self.cfg.target_fitness.is_some_and(|t| self.best.record.fitness >= t);
        self.stopped = budget_spent || target_met;
    }

    pub fn is_finished(&self) -> bool {
        self.stopped
    }

    pub fn generation(&self) -> usize {
        self.population.generation
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn best(&self) -> &Member {
        &self.best
    }

    pub fn history(&self) -> &RunHistory {
        &self.history
    }

    /// Rows logged for the current generation.
    pub fn latest_rows(&self) -> &[HistoryRow] {
        let n = self.population.members.len();
        &self.history.rows[self.history.rows.len().saturating_sub(n)..]
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            generation: self.population.generation,
            next_id: self.next_id,
            master_seed: self.cfg.master_seed,
            space: self.space,
            members: self.population.members.clone(),
            best: self.best.clone(),
        }
    }

    /// Breeds, evaluates and selects the next generation. Returns false when
    /// the run had already finished.
    pub fn step(&mut self) -> bool {
        if self.stopped {
            return false;
        }
        let offspring = self.breed();
        let evaluated = evaluate(self.evaluator, &self.cfg, offspring);
        let parents = std::mem::take(&mut self.population.members);
        self.population = Population {
            generation: self.population.generation + 1,
            members: environmental_select(parents, evaluated, self.cfg.population_size),
        };
        self.after_generation();
        true
    }

    fn breed(&mut self) -> Vec<Individual> {
        let max_len = self.space.effective_max_length;
        let generation = self.population.generation as u64;
        let members = &self.population.members;
        let mut offspring = Vec::new();

        for slot in 0..self.cfg.population_size.div_ceil(2) {
            let mut rng = rng::stream(self.cfg.master_seed, "breed", &[generation, slot as u64]);
            let (a, b) = tournament_select(members, &mut rng);
            let (ia, ib) = (&a.individual, &b.individual);

            let mut children = [
                (ia.genome.clone(), vec![ia.id], false, None),
                (ib.genome.clone(), vec![ib.id], false, None),
            ];
            if rng.gen::<f64>() < self.cfg.crossover_prob {
                if let Ok((x, y)) = crossover(&ia.genome, &ib.genome, &mut rng) {
                    let mut parents = vec![ia.id, ib.id];
                    parents.dedup();
                    children[0] = (x, parents.clone(), true, None);
                    children[1] = (y, parents, true, None);
                }
            }
            for (genome, _, _, mutation) in children.iter_mut() {
                if rng.gen::<f64>() < self.cfg.mutation_prob {
                    let at_cap = genome.effective_length() >= max_len;
                    let (mutated, kind) = mutate(genome, max_len, at_cap, &self.cfg.menu, &mut rng);
                    if kind.is_some() {
                        *genome = mutated;
                        *mutation = kind;
                    }
                }
            }

            for ((genome, parents, crossed, mutation), origin_genome) in
                children.into_iter().zip([&ia.genome, &ib.genome])
            {
                if genome == *origin_genome {
                    continue;
                }
                offspring.push(Individual {
                    id: self.next_id,
                    genome,
                    lineage: Lineage {
                        parents,
                        origin: Origin::Offspring {
                            crossover: crossed,
                            mutation,
                        },
                    },
                });
                self.next_id += 1;
            }
        }
        offspring
    }

    /// Runs remaining generations and returns the result.
    pub fn run(mut self) -> EvolutionOutcome {
        while self.step() {}
        self.finish()
    }

    pub fn finish(self) -> EvolutionOutcome {
        EvolutionOutcome {
            best: self.best,
            history: self.history,
            population: self.population,
        }
    }
}

fn evaluate(evaluator: &Evaluator, cfg: &EvolutionConfig, individuals: Vec<Individual>) -> Vec<Member> {
    let jobs: Vec<EvalJob<'_>> = individuals
        .iter()
        .map(|ind| EvalJob {
            genome: &ind.genome,
            budget: &cfg.eval_budget,
            repeat_index: 0,
        })
        .collect();
    let records = evaluator.evaluate_batch(&jobs);
    individuals
        .into_iter()
        .zip(records)
        .map(|(individual, record)| Member { individual, record })
        .collect()
}

/// Runs the whole search inside `space`.
pub fn evolve(
    cfg: &EvolutionConfig,
    space: OptimalSpace,
    evaluator: &Evaluator,
) -> Result<EvolutionOutcome, EvolutionError> {
    Ok(Evolution::start(cfg, space, evaluator)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{EvalTask, SurrogateSpec};
    use crate::genome::ImageShape;
    use crate::lengthsearch::LengthSpace;

    fn ev(spec: SurrogateSpec) -> Evaluator {
        Evaluator::surrogate(
            spec,
            EvalTask {
                input_shape: ImageShape::new(32, 32, 3),
                num_classes: 10,
            },
        )
    }

    fn space_4_8() -> OptimalSpace {
        OptimalSpace::new(LengthSpace::nth(2, 4), 2)
    }

    #[test]
    fn finds_peak_length() {
        let cfg = EvolutionConfig::default();
        let out = evolve(&cfg, space_4_8(), &ev(SurrogateSpec::length_peak(6))).unwrap();
        assert_eq!(out.best.individual.genome.effective_length(), 6);
        assert_eq!(out.best.record.fitness, 1.0);
        assert_eq!(out.history.best_per_generation().len(), 10);
    }

    #[test]
    fn zero_target_stops_after_first_generation() {
        let cfg = EvolutionConfig {
            target_fitness: Some(0.0),
            ..EvolutionConfig::default()
        };
        let out = evolve(&cfg, space_4_8(), &ev(SurrogateSpec::length_peak(6))).unwrap();
        assert_eq!(out.history.best_per_generation().len(), 1);
        assert_eq!(out.history.rows.len(), 25);
    }

    #[test]
    fn missing_space_is_an_error() {
        let cfg = EvolutionConfig::default();
        assert!(matches!(
            evolve(&cfg, OptimalSpace::none(2), &ev(SurrogateSpec::plateau(0.5))),
            Err(EvolutionError::NoSpace)
        ));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let spec = SurrogateSpec::length_peak(9).with_noise(0.05, 3);
        let cfg = EvolutionConfig {
            master_seed: 17,
            ..EvolutionConfig::default()
        };
        let evaluator = ev(spec.clone());
        let full = evolve(&cfg, space_4_8(), &evaluator).unwrap();

        let short = EvolutionConfig {
            generations: 4,
            ..cfg.clone()
        };
        let evaluator2 = ev(spec);
        let first = Evolution::start(&short, space_4_8(), &evaluator2).unwrap();
        let first = {
            let mut e = first;
            while e.step() {}
            e
        };
        let ckpt = first.checkpoint();
        let mut rows = first.history().rows.clone();
        let rest = Evolution::resume(&cfg, ckpt, &evaluator2).unwrap().run();
        rows.extend(rest.history.rows);
        assert_eq!(rows, full.history.rows);
        assert_eq!(rest.best, full.best);
    }

    #[test]
    fn origin_labels() {
        assert_eq!(Origin::Init(InitMode::Random).to_string(), "init-random");
        assert_eq!(
            Origin::Offspring {
                crossover: true,
                mutation: Some(MutationKind::Add)
            }
            .to_string(),
            "crossover+mutate-add"
        );
        assert_eq!(
            Origin::Offspring {
                crossover: false,
                mutation: Some(MutationKind::Update)
            }
            .to_string(),
            "mutate-update"
        );
    }
}
