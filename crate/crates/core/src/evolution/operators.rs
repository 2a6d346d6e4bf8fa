//! Genetic operators: initialization, tournament selection, multi-point
//! crossover, add/update mutation and elitist environmental selection.

use super::Member;
use crate::config::InitMode;
use crate::genome::{GeneMenu, Genome, LayerGene, LayerKind};
use crate::lengthsearch::OptimalSpace;
use crate::rng;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Proposals tried by [`mutate`] before giving up.
pub const MUTATION_ATTEMPTS: usize = 8;

/// Effective lengths assigned at initialization: from the bottom of the
/// space up to two layers above it, never past the effective maximum.
pub fn init_lengths(space: &OptimalSpace) -> std::ops::RangeInclusive<usize> {
    let Some(sel) = space.selected else {
        return 0..=0;
    };
    let lo = if sel.is_zero() { 0 } else { sel.min.max(1) };
    let hi = (lo + 2).min(space.effective_max_length).max(lo);
    lo..=hi
}

/// Conv blocks each followed by one or two Pools, then one hidden dense unit
/// and the classifier.
pub fn standard_genome<R: Rng + ?Sized>(length: usize, menu: &GeneMenu, num_classes: u32, rng: &mut R) -> Genome {
    let mut blocks = Vec::new();
    let mut remaining = length;
    while remaining > 0 {
        let mut block = vec![menu.conv(rng)];
        let pools = match remaining {
            1 => 0,
            2 => 1,
            _ => rng.gen_range(1..=2),
        };
        block.extend((0..pools).map(|_| menu.pool(rng)));
        remaining -= block.len();
        blocks.push(block);
    }
    Genome::new(blocks, menu.head(1, num_classes, rng))
}

/// Blocks of 1-3 genes with a random Conv/Pool split, each starting with
/// Conv, then one or two hidden dense units and the classifier.
pub fn random_genome<R: Rng + ?Sized>(length: usize, menu: &GeneMenu, num_classes: u32, rng: &mut R) -> Genome {
    let mut blocks = Vec::new();
    let mut remaining = length;
    while remaining > 0 {
        let size = rng.gen_range(1..=remaining.min(3));
        let convs = rng.gen_range(1..=size);
        let mut block: Vec<LayerGene> = (0..convs).map(|_| menu.conv(rng)).collect();
        block.extend((convs..size).map(|_| menu.pool(rng)));
        remaining -= size;
        blocks.push(block);
    }
    let hidden = rng.gen_range(1..=2);
    Genome::new(blocks, menu.head(hidden, num_classes, rng))
}

/// Initial population inside `space`. Slot `i` draws from its own stream.
pub fn init_population(
    mode: InitMode,
    space: &OptimalSpace,
    size: usize,
    menu: &GeneMenu,
    num_classes: u32,
    master_seed: u64,
) -> Vec<Genome> {
    let lengths = init_lengths(space);
    (0..size)
        .map(|slot| {
            let mut rng = rng::stream(master_seed, "init", &[slot as u64]);
            let length = rng.gen_range(lengths.clone());
            match mode {
                InitMode::Standard => standard_genome(length, menu, num_classes, &mut rng),
                InitMode::Random => random_genome(length, menu, num_classes, &mut rng),
            }
        })
        .collect()
}

/// Two independent binary tournaments over distinct pairs. A strictly
/// fitter member wins; a tie goes to the first one drawn.
pub fn tournament_select<'a, R: Rng + ?Sized>(pop: &'a [Member], rng: &mut R) -> (&'a Member, &'a Member) {
    assert!(pop.len() >= 2, "tournament needs at least two members");
    let mut duel = || {
        let pair = index::sample(rng, pop.len(), 2);
        let (a, b) = (&pop[pair.index(0)], &pop[pair.index(1)]);
        if b.record.fitness > a.record.fitness {
            b
        } else {
            a
        }
    };
    let first = duel();
    (first, duel())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("genomes share no swappable layer kind")]
pub struct NoCrossoverPoint;

/// Flat gene indices that crossover may touch, by kind. The classifier is
/// excluded.
fn swappable(g: &Genome) -> Vec<(LayerKind, usize)> {
    let genes: Vec<&LayerGene> = g.layers().collect();
    let classifier = genes.len().checked_sub(1);
    genes
        .iter()
        .enumerate()
        .filter(|&(i, gene)| match gene.kind() {
            LayerKind::Conv | LayerKind::Pool => true,
            LayerKind::Dense => Some(i) != classifier,
            _ => false,
        })
        .map(|(i, gene)| (gene.kind(), i))
        .collect()
}

fn gene_mut(g: &mut Genome, flat: usize) -> &mut LayerGene {
    g.blocks
        .iter_mut()
        .flat_map(|b| b.layers.iter_mut())
        .nth(flat)
        .expect("gene index in range")
}

fn swap_hyperparameters(x: &mut LayerGene, y: &mut LayerGene) {
    match (x, y) {
        (
            LayerGene::Conv {
                filters: fa,
                kernel: ka,
                ..
            },
            LayerGene::Conv {
                filters: fb,
                kernel: kb,
                ..
            },
        ) => {
            std::mem::swap(fa, fb);
            std::mem::swap(ka, kb);
        }
        (LayerGene::Pool { mode: ma, .. }, LayerGene::Pool { mode: mb, .. }) => std::mem::swap(ma, mb),
        (LayerGene::Dense { units: ua }, LayerGene::Dense { units: ub }) => std::mem::swap(ua, ub),
        _ => panic!("crossover pairs must share a kind"),
    }
}

/// Swaps hyperparameters at the given `(gene in a, gene in b)` pairs.
pub fn crossover_at(a: &Genome, b: &Genome, pairs: &[(usize, usize)]) -> (Genome, Genome) {
    let (mut x, mut y) = (a.clone(), b.clone());
    for &(i, j) in pairs {
        swap_hyperparameters(gene_mut(&mut x, i), gene_mut(&mut y, j));
    }
    (x, y)
}

/// Random one-to-one pairing of same-kind genes across the two genomes.
pub fn crossover_pairs<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> Vec<(usize, usize)> {
    let (sa, sb) = (swappable(a), swappable(b));
    let mut pairs = Vec::new();
    for kind in [LayerKind::Conv, LayerKind::Pool, LayerKind::Dense] {
        let mut ia: Vec<usize> = sa.iter().filter(|(k, _)| *k == kind).map(|&(_, i)| i).collect();
        let mut ib: Vec<usize> = sb.iter().filter(|(k, _)| *k == kind).map(|&(_, i)| i).collect();
        ia.shuffle(rng);
        ib.shuffle(rng);
        pairs.extend(ia.into_iter().zip(ib));
    }
    pairs
}

/// Multi-point crossover: a random nonempty subset of the same-kind gene
/// pairs exchange hyperparameters. Lengths and block layout are unchanged.
pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, rng: &mut R) -> Result<(Genome, Genome), NoCrossoverPoint> {
    let pairs = crossover_pairs(a, b, rng);
    if pairs.is_empty() {
        return Err(NoCrossoverPoint);
    }
    let mut points: Vec<(usize, usize)> = pairs.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if points.is_empty() {
        points.push(*pairs.choose(rng).unwrap());
    }
    Ok(crossover_at(a, b, &points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Add,
    Update,
}

/// Inserts `gene` so it lands at flat feature position `pos`, then regroups
/// the feature genes into blocks.
pub fn insert_feature_gene(g: &Genome, pos: usize, gene: LayerGene) -> Genome {
    let mut features = g.feature_genes();
    features.insert(pos.min(features.len()), gene);
    Genome::reblocked(&features, g.head_layers())
}

fn propose_add<R: Rng + ?Sized>(g: &Genome, menu: &GeneMenu, rng: &mut R) -> Genome {
    let pos = rng.gen_range(0..=g.effective_length());
    let gene = if rng.gen_bool(0.5) {
        menu.conv(rng)
    } else {
        menu.pool(rng)
    };
    insert_feature_gene(g, pos, gene)
}

fn propose_update<R: Rng + ?Sized>(g: &Genome, menu: &GeneMenu, targets: &[usize], rng: &mut R) -> Vec<Genome> {
    let target = *targets.choose(rng).unwrap();
    let current = g.layers().nth(target).unwrap().clone();
    let replacement = match current.kind() {
        // the first feature gene must stay a conv
        LayerKind::Conv if target > 0 && rng.gen_bool(0.5) => Some(menu.pool(rng)),
        LayerKind::Pool if rng.gen_bool(0.5) => Some(menu.conv(rng)),
        _ => menu.resample(&current, rng),
    };
    let Some(replacement) = replacement else {
        return Vec::new();
    };
    let mut kept = g.clone();
    *gene_mut(&mut kept, target) = replacement;
    // a kind flip may only fit after regrouping the feature blocks
    let regrouped = Genome::reblocked(&kept.feature_genes(), kept.head_layers());
    vec![kept, regrouped]
}

/// Mutates `g` by adding a feature gene or updating one gene.
///
/// `at_cap` restricts the choice to update. An add on a genome already at
/// `max_len` is a no-op. Invalid proposals are retried up to
/// [`MUTATION_ATTEMPTS`] times; the returned kind is `None` on a no-op.
pub fn mutate<R: Rng + ?Sized>(
    g: &Genome,
    max_len: usize,
    at_cap: bool,
    menu: &GeneMenu,
    rng: &mut R,
) -> (Genome, Option<MutationKind>) {
    let kind = if at_cap || rng.gen_bool(0.5) {
        MutationKind::Update
    } else {
        MutationKind::Add
    };
    let unchanged = (g.clone(), None);

    match kind {
        MutationKind::Add => {
            if g.effective_length() >= max_len {
                return unchanged;
            }
            for _ in 0..MUTATION_ATTEMPTS {
                let proposal = propose_add(g, menu, rng);
                if proposal.is_valid(max_len) {
                    return (proposal, Some(MutationKind::Add));
                }
            }
        }
        MutationKind::Update => {
            let targets: Vec<usize> = swappable(g).into_iter().map(|(_, i)| i).collect();
            if targets.is_empty() {
                return unchanged;
            }
            for _ in 0..MUTATION_ATTEMPTS {
                for proposal in propose_update(g, menu, &targets, rng) {
                    if proposal != *g && proposal.is_valid(max_len) {
                        return (proposal, Some(MutationKind::Update));
                    }
                }
            }
        }
    }
    unchanged
}

/// Survival order: higher fitness, then fewer parameters, then lower id.
pub fn survival_order(a: &Member, b: &Member) -> Ordering {
    b.record
        .fitness
        .total_cmp(&a.record.fitness)
        .then(a.record.num_params.cmp(&b.record.num_params))
        .then(a.individual.id.cmp(&b.individual.id))
}

/// Keeps the `size` best of parents and offspring.
pub fn environmental_select(parents: Vec<Member>, offspring: Vec<Member>, size: usize) -> Vec<Member> {
    let mut union: Vec<Member> = parents.into_iter().chain(offspring).collect();
    union.sort_by(survival_order);
    union.truncate(size);
    union
}
