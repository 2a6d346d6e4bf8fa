use super::{LayerGene, PoolMode};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const FILTERS: [u32; 4] = [16, 32, 64, 128];
pub const KERNELS: [u32; 2] = [3, 5];
pub const DENSE_UNITS: [u32; 3] = [64, 128, 256];
pub const DROPOUT_RATE: f64 = 0.5;

const POOL_MODES: [PoolMode; 2] = [PoolMode::Max, PoolMode::Avg];

/// Finite hyperparameter menus that random genes are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneMenu {
    pub filters: Vec<u32>,
    pub kernels: Vec<u32>,
    pub dense_units: Vec<u32>,
    pub dropout_rate: f64,
}

impl Default for GeneMenu {
    fn default() -> Self {
        GeneMenu {
            filters: FILTERS.to_vec(),
            kernels: KERNELS.to_vec(),
            dense_units: DENSE_UNITS.to_vec(),
            dropout_rate: DROPOUT_RATE,
        }
    }
}

impl GeneMenu {
    pub fn conv<R: Rng + ?Sized>(&self, rng: &mut R) -> LayerGene {
        LayerGene::conv(*pick(&self.filters, rng), *pick(&self.kernels, rng))
    }

    pub fn pool<R: Rng + ?Sized>(&self, rng: &mut R) -> LayerGene {
        LayerGene::pool(*pick(&POOL_MODES, rng))
    }

    pub fn dense<R: Rng + ?Sized>(&self, rng: &mut R) -> LayerGene {
        LayerGene::dense(*pick(&self.dense_units, rng))
    }

    /// A hidden Dense gene followed by BatchNorm and Dropout.
    pub fn dense_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> [LayerGene; 3] {
        [
            self.dense(rng),
            LayerGene::BatchNorm,
            LayerGene::dropout(self.dropout_rate),
        ]
    }

    /// `hidden` dense units then the classifier.
    pub fn head<R: Rng + ?Sized>(&self, hidden: usize, num_classes: u32, rng: &mut R) -> Vec<LayerGene> {
        let mut layers: Vec<LayerGene> = (0..hidden).flat_map(|_| self.dense_unit(rng)).collect();
        layers.push(LayerGene::dense(num_classes));
        layers
    }

    /// Same kind as `gene`, with hyperparameters that differ where the menu
    /// allows it. Returns `None` when the menu has no alternative.
    pub fn resample<R: Rng + ?Sized>(&self, gene: &LayerGene, rng: &mut R) -> Option<LayerGene> {
        match *gene {
            LayerGene::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let options: Vec<(u32, u32)> = self
                    .filters
                    .iter()
                    .flat_map(|&f| self.kernels.iter().map(move |&k| (f, k)))
                    .filter(|&(f, k)| (f, k) != (filters, kernel))
                    .collect();
                options.choose(rng).map(|&(f, k)| LayerGene::Conv {
                    filters: f,
                    kernel: k,
                    stride,
                    padding,
                })
            }
            LayerGene::Pool { mode, window, stride } => Some(LayerGene::Pool {
                mode: match mode {
                    PoolMode::Max => PoolMode::Avg,
                    PoolMode::Avg => PoolMode::Max,
                },
                window,
                stride,
            }),
            LayerGene::Dense { units } => {
                let options: Vec<u32> = self.dense_units.iter().copied().filter(|&u| u != units).collect();
                options.choose(rng).map(|&u| LayerGene::dense(u))
            }
            LayerGene::BatchNorm | LayerGene::Dropout { .. } => None,
        }
    }
}

fn pick<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> &'a T {
    items.choose(rng).expect("menu must not be empty")
}
