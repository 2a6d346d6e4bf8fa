//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the crate's shape or parameter code: output
//! extents are found by walking window positions one step at a time and
//! weight tensors are described axis by axis.

#![allow(dead_code)]

use evolen::genome::{ImageShape, LayerGene, Padding, PoolMode};
use evolen::Genome;
use rand::seq::SliceRandom;
use rand::Rng;

/// Number of window placements along one axis.
fn placements(extent: u64, window: u64, stride: u64, padding: Padding) -> u64 {
    let mut count = 0;
    let mut start = 0;
    while start < extent {
        let fits = match padding {
            Padding::Same => true,
            Padding::Valid => start + window <= extent,
        };
        if fits {
            count += 1;
        }
        start += stride;
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    Map { h: u64, w: u64, c: u64 },
    Vector(u64),
}

/// Parameter total of `genome` on `input`, or `None` when some layer would
/// produce an empty feature map.
pub fn oracle_params(genome: &Genome, input: ImageShape) -> Option<u64> {
    let mut act = Activation::Map {
        h: input.height as u64,
        w: input.width as u64,
        c: input.channels as u64,
    };
    let mut total = 0u64;
    for gene in genome.layers() {
        let (next, tensors): (Activation, Vec<Vec<u64>>) = match (gene, act) {
            (
                LayerGene::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                },
                Activation::Map { h, w, c },
            ) => {
                let (k, s, f) = (*kernel as u64, *stride as u64, *filters as u64);
                let next = Activation::Map {
                    h: placements(h, k, s, *padding),
                    w: placements(w, k, s, *padding),
                    c: f,
                };
                (next, vec![vec![k, k, c, f], vec![f]])
            }
            (LayerGene::Pool { window, stride, .. }, Activation::Map { h, w, c }) => {
                let (k, s) = (*window as u64, *stride as u64);
                let next = Activation::Map {
                    h: placements(h, k, s, Padding::Valid),
                    w: placements(w, k, s, Padding::Valid),
                    c,
                };
                (next, vec![])
            }
            (LayerGene::Conv { .. } | LayerGene::Pool { .. }, Activation::Vector(_)) => return None,
            (LayerGene::Dense { units }, a) => {
                let inputs = match a {
                    Activation::Map { h, w, c } => h * w * c,
                    Activation::Vector(n) => n,
                };
                let u = *units as u64;
                (Activation::Vector(u), vec![vec![inputs, u], vec![u]])
            }
            (LayerGene::BatchNorm, a) => {
                let c = match a {
                    Activation::Map { c, .. } => c,
                    Activation::Vector(n) => n,
                };
                (a, vec![vec![c], vec![c]])
            }
            (LayerGene::Dropout { .. }, a) => (a, vec![]),
        };
        if let Activation::Map { h, w, .. } = next {
            if h == 0 || w == 0 {
                return None;
            }
        }
        total += tensors.iter().map(|dims| dims.iter().product::<u64>()).sum::<u64>();
        act = next;
    }
    Some(total)
}

pub const SHAPES: [ImageShape; 4] = [
    ImageShape::new(32, 32, 3),
    ImageShape::new(28, 28, 1),
    ImageShape::new(64, 48, 3),
    ImageShape::new(7, 9, 2),
];

fn random_conv<R: Rng>(rng: &mut R) -> LayerGene {
    LayerGene::Conv {
        filters: *[4, 16, 32, 64, 128].choose(rng).unwrap(),
        kernel: *[1, 3, 5].choose(rng).unwrap(),
        stride: rng.gen_range(1..=2),
        padding: if rng.gen_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        },
    }
}

fn random_pool<R: Rng>(rng: &mut R) -> LayerGene {
    LayerGene::Pool {
        mode: if rng.gen_bool(0.5) {
            PoolMode::Max
        } else {
            PoolMode::Avg
        },
        window: rng.gen_range(1..=3),
        stride: rng.gen_range(1..=2),
    }
}

/// A structurally valid genome with hyperparameters drawn well beyond the
/// default menu: valid padding, strides of 2, 1x1 and 3x3 pooling windows.
pub fn random_genome<R: Rng>(rng: &mut R, max_len: usize) -> Genome {
    let mut remaining = rng.gen_range(0..=max_len);
    let mut blocks = Vec::new();
    while remaining > 0 {
        let size = rng.gen_range(1..=remaining.min(3));
        let convs = rng.gen_range(1..=size);
        let block: Vec<LayerGene> = (0..size)
            .map(|i| if i < convs { random_conv(rng) } else { random_pool(rng) })
            .collect();
        blocks.push(block);
        remaining -= size;
    }
    let mut head = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        head.push(match rng.gen_range(0..3) {
            0 => LayerGene::dense(*[8, 64, 256].choose(rng).unwrap()),
            1 => LayerGene::BatchNorm,
            _ => LayerGene::dropout(0.5),
        });
    }
    head.push(LayerGene::dense(rng.gen_range(2..=100)));
    Genome::new(blocks, head)
}

/// Conv (same padding, stride 1) and 2x2/2 pool genome with the given
/// gene kinds; `true` marks a pool.
pub fn same_conv_genome(pools: &[bool]) -> Genome {
    let features: Vec<LayerGene> = pools
        .iter()
        .map(|&p| {
            if p {
                LayerGene::pool(PoolMode::Max)
            } else {
                LayerGene::conv(16, 3)
            }
        })
        .collect();
    Genome::reblocked(&features, vec![LayerGene::dense(10)])
}

/// Pearson chi-square statistic against a uniform expectation.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum()
}
