//! Architectural genotype of a CNN.
//!
//! A [`Genome`] is an ordered list of [`Block`]s: zero or more feature blocks
//! holding convolution and pooling genes, followed by exactly one head block
//! of dense, batch-norm and dropout genes that ends in the classifier.
//!
//! Genomes are plain values. Identity and ancestry live on
//! [`crate::evolution::Individual`], so two genomes with the same layers are
//! equal and serialize to the same bytes.

mod menu;
mod shape;

pub use menu::{GeneMenu, DENSE_UNITS, DROPOUT_RATE, FILTERS, KERNELS};
pub use shape::{count_params, infer_shapes, ImageShape, LayerShape, OutOfShape, ShapeReport};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Maximum number of genes in one feature block.
pub const MAX_FEATURE_BLOCK_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Avg,
}

/// One architectural gene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerGene {
    Conv {
        filters: u32,
        kernel: u32,
        stride: u32,
        padding: Padding,
    },
    Pool {
        mode: PoolMode,
        window: u32,
        stride: u32,
    },
    Dense {
        units: u32,
    },
    BatchNorm,
    Dropout {
        rate: f64,
    },
}

/// Discriminant of a [`LayerGene`], used for pairing and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LayerKind {
    Conv,
    Pool,
    Dense,
    BatchNorm,
    Dropout,
}

impl LayerGene {
    /// Convolution with stride 1 and same padding.
    pub fn conv(filters: u32, kernel: u32) -> Self {
        LayerGene::Conv {
            filters,
            kernel,
            stride: 1,
            padding: Padding::Same,
        }
    }

    /// 2x2 pooling with stride 2.
    pub fn pool(mode: PoolMode) -> Self {
        LayerGene::Pool {
            mode,
            window: 2,
            stride: 2,
        }
    }

    pub fn dense(units: u32) -> Self {
        LayerGene::Dense { units }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerGene::Dropout { rate }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerGene::Conv { .. } => LayerKind::Conv,
            LayerGene::Pool { .. } => LayerKind::Pool,
            LayerGene::Dense { .. } => LayerKind::Dense,
            LayerGene::BatchNorm => LayerKind::BatchNorm,
            LayerGene::Dropout { .. } => LayerKind::Dropout,
        }
    }

    /// Conv and Pool genes count toward the effective length.
    pub fn is_feature(&self) -> bool {
        matches!(self, LayerGene::Conv { .. } | LayerGene::Pool { .. })
    }

    fn parameter_violation(&self) -> Option<String> {
        match *self {
            LayerGene::Conv {
                filters,
                kernel,
                stride,
                ..
            } => {
                if filters == 0 {
                    Some("conv filters must be positive".into())
                } else if kernel == 0 || kernel % 2 == 0 {
                    Some(format!("conv kernel must be positive and odd, got {kernel}"))
                } else if stride == 0 {
                    Some("conv stride must be positive".into())
                } else {
                    None
                }
            }
            LayerGene::Pool { window, stride, .. } => {
                if window == 0 || stride == 0 {
                    Some("pool window and stride must be positive".into())
                } else {
                    None
                }
            }
            LayerGene::Dense { units: 0 } => Some("dense units must be positive".into()),
            LayerGene::Dropout { rate } if !(rate > 0.0 && rate < 1.0) => {
                Some(format!("dropout rate must lie in (0, 1), got {rate}"))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Feature,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub kind: BlockKind,
    pub layers: Vec<LayerGene>,
}

impl Block {
    pub fn feature(layers: Vec<LayerGene>) -> Self {
        Block {
            kind: BlockKind::Feature,
            layers,
        }
    }

    pub fn head(layers: Vec<LayerGene>) -> Self {
        Block {
            kind: BlockKind::Head,
            layers,
        }
    }
}

/// An encoded CNN architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Genome {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Error)]
#[error("malformed genome: {0}")]
pub struct MalformedGenome(String);

/// A broken genome or block invariant. Violations are reported as data by
/// [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingHead,
    HeadNotLast,
    MultipleHeads,
    FirstFeatureNotConv,
    EmptyFeatureBlock { block: usize },
    FeatureBlockTooLong { block: usize, len: usize },
    FeatureBlockWithoutConv { block: usize },
    ConvAfterPool { block: usize },
    ForeignGene { block: usize, layer: usize },
    HeadWithoutClassifier,
    BadParameter { block: usize, layer: usize, reason: String },
    LengthExceedsBound { length: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingHead => write!(f, "genome has no head block"),
            Violation::HeadNotLast => write!(f, "head block must be the last block"),
            Violation::MultipleHeads => write!(f, "genome has more than one head block"),
            Violation::FirstFeatureNotConv => write!(f, "first feature gene must be Conv"),
            Violation::EmptyFeatureBlock { block } => write!(f, "feature block {block} is empty"),
            Violation::FeatureBlockTooLong { block, len } => write!(
                f,
                "feature block {block} has {len} layers (max {MAX_FEATURE_BLOCK_LEN})"
            ),
            Violation::FeatureBlockWithoutConv { block } => {
                write!(f, "feature block {block} has no Conv gene")
            }
            Violation::ConvAfterPool { block } => {
                write!(f, "feature block {block} has a Conv gene after a Pool gene")
            }
            Violation::ForeignGene { block, layer } => {
                write!(f, "gene {layer} of block {block} does not belong to that block kind")
            }
            Violation::HeadWithoutClassifier => {
                write!(f, "head block must end with a Dense classifier gene")
            }
            Violation::BadParameter { block, layer, reason } => {
                write!(f, "gene {layer} of block {block}: {reason}")
            }
            Violation::LengthExceedsBound { length, max } => {
                write!(f, "length exceeds bound ({length} > {max})")
            }
        }
    }
}

impl Genome {
    /// Builds a genome from feature blocks and the head layers.
    pub fn new(features: Vec<Vec<LayerGene>>, head: Vec<LayerGene>) -> Self {
        let mut blocks: Vec<Block> = features.into_iter().map(Block::feature).collect();
        blocks.push(Block::head(head));
        Genome { blocks }
    }

    /// Number of Conv and Pool genes.
    pub fn effective_length(&self) -> usize {
        self.layers().filter(|g| g.is_feature()).count()
    }

    /// All genes in network order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerGene> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    pub fn feature_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| b.kind == BlockKind::Feature)
    }

    pub fn head(&self) -> Option<&Block> {
        self.blocks.iter().find(|b| b.kind == BlockKind::Head)
    }

    /// Conv and Pool genes in network order.
    pub fn feature_genes(&self) -> Vec<LayerGene> {
        self.feature_blocks().flat_map(|b| b.layers.iter().cloned()).collect()
    }

    /// Checks every structural invariant plus the length bound.
    pub fn validate(&self, max_length: usize) -> Vec<Violation> {
        validate(self, max_length)
    }

    pub fn is_valid(&self, max_length: usize) -> bool {
        self.validate(max_length).is_empty()
    }

    /// Canonical JSON: compact, keys sorted, no whitespace.
    pub fn to_canonical_json(&self) -> String {
        // serde_json's Value map is ordered by key
        let value = serde_json::to_value(self).expect("genome serializes");
        value.to_string()
    }

    pub fn from_json(text: &str) -> Result<Self, MalformedGenome> {
        serde_json::from_str(text).map_err(|e| MalformedGenome(e.to_string()))
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, MalformedGenome> {
        serde_json::from_value(value).map_err(|e| MalformedGenome(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn fingerprint(&self) -> String {
        crate::rng::hex_digest(self.to_canonical_json().as_bytes())
    }

    /// Regroups feature genes greedily into blocks of at most
    /// [`MAX_FEATURE_BLOCK_LEN`] genes, starting a new block whenever a Conv
    /// follows a Pool. The head is kept as is.
    pub fn reblocked(features: &[LayerGene], head: Vec<LayerGene>) -> Self {
        let mut blocks: Vec<Vec<LayerGene>> = Vec::new();
        for gene in features {
            let start_new = match blocks.last() {
                None => true,
                Some(cur) => {
                    cur.len() >= MAX_FEATURE_BLOCK_LEN
                        || (gene.kind() == LayerKind::Conv && cur.iter().any(|g| g.kind() == LayerKind::Pool))
                }
            };
            if start_new {
                blocks.push(Vec::new());
            }
            blocks.last_mut().unwrap().push(gene.clone());
        }
        Genome::new(blocks, head)
    }

    /// Head genes, or an empty list when the head is missing.
    pub fn head_layers(&self) -> Vec<LayerGene> {
        self.head().map(|h| h.layers.clone()).unwrap_or_default()
    }
}

/// Number of Conv and Pool genes in `genome`.
pub fn effective_length(genome: &Genome) -> usize {
    genome.effective_length()
}

/// Lists every broken invariant; empty iff the genome is valid and its
/// effective length is at most `max_length`.
pub fn validate(genome: &Genome, max_length: usize) -> Vec<Violation> {
    let mut out = Vec::new();

    let head_positions: Vec<usize> = genome
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BlockKind::Head)
        .map(|(i, _)| i)
        .collect();
    match head_positions.as_slice() {
        [] => out.push(Violation::MissingHead),
        [i] if *i + 1 != genome.blocks.len() => out.push(Violation::HeadNotLast),
        [_] => {}
        _ => out.push(Violation::MultipleHeads),
    }

    if let Some(first) = genome.feature_blocks().next().and_then(|b| b.layers.first()) {
        if first.kind() != LayerKind::Conv {
            out.push(Violation::FirstFeatureNotConv);
        }
    }

    for (bi, block) in genome.blocks.iter().enumerate() {
        for (li, gene) in block.layers.iter().enumerate() {
            if let Some(reason) = gene.parameter_violation() {
                out.push(Violation::BadParameter {
                    block: bi,
                    layer: li,
                    reason,
                });
            }
        }
        match block.kind {
            BlockKind::Feature => validate_feature_block(bi, block, &mut out),
            BlockKind::Head => {
                for (li, gene) in block.layers.iter().enumerate() {
                    if gene.is_feature() {
                        out.push(Violation::ForeignGene { block: bi, layer: li });
                    }
                }
                if block.layers.last().map(LayerGene::kind) != Some(LayerKind::Dense) {
                    out.push(Violation::HeadWithoutClassifier);
                }
            }
        }
    }

    let length = genome.effective_length();
    if length > max_length {
        out.push(Violation::LengthExceedsBound {
            length,
            max: max_length,
        });
    }
    out
}

fn validate_feature_block(bi: usize, block: &Block, out: &mut Vec<Violation>) {
    let layers = &block.layers;
    if layers.is_empty() {
        out.push(Violation::EmptyFeatureBlock { block: bi });
        return;
    }
    if layers.len() > MAX_FEATURE_BLOCK_LEN {
        out.push(Violation::FeatureBlockTooLong {
            block: bi,
            len: layers.len(),
        });
    }
    for (li, gene) in layers.iter().enumerate() {
        if !gene.is_feature() {
            out.push(Violation::ForeignGene { block: bi, layer: li });
        }
    }
    if !layers.iter().any(|g| g.kind() == LayerKind::Conv) {
        out.push(Violation::FeatureBlockWithoutConv { block: bi });
    }
    let first_pool = layers.iter().position(|g| g.kind() == LayerKind::Pool);
    if let Some(p) = first_pool {
        if layers[p..].iter().any(|g| g.kind() == LayerKind::Conv) {
            out.push(Violation::ConvAfterPool { block: bi });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(classes: u32) -> Vec<LayerGene> {
        vec![LayerGene::dense(classes)]
    }

    fn cp() -> Vec<LayerGene> {
        vec![LayerGene::conv(32, 3), LayerGene::pool(PoolMode::Max)]
    }

    #[test]
    fn effective_length_counts_conv_and_pool_only() {
        let g = Genome::new(vec![cp(), cp(), cp()], head(10));
        assert_eq!(g.effective_length(), 6);

        let dense_only = Genome::new(vec![], head(10));
        assert_eq!(dense_only.effective_length(), 0);

        let g = Genome::new(
            vec![vec![
                LayerGene::conv(16, 3),
                LayerGene::conv(16, 3),
                LayerGene::pool(PoolMode::Avg),
            ]],
            vec![
                LayerGene::dense(64),
                LayerGene::dropout(0.5),
                LayerGene::dense(64),
                LayerGene::dropout(0.5),
                LayerGene::dense(10),
            ],
        );
        assert_eq!(g.effective_length(), 3);
    }

    #[test]
    fn validate_reports_leading_pool() {
        let g = Genome::new(
            vec![vec![LayerGene::pool(PoolMode::Max), LayerGene::conv(16, 3)]],
            head(10),
        );
        let v = g.validate(8);
        assert!(v.contains(&Violation::FirstFeatureNotConv));
        assert!(v.iter().any(|v| v.to_string() == "first feature gene must be Conv"));
    }

    #[test]
    fn validate_accepts_simple_genome() {
        let g = Genome::new(vec![cp()], head(10));
        assert!(g.validate(8).is_empty());
    }

    #[test]
    fn validate_rejects_overlong_genome() {
        let g = Genome::new(vec![cp(), cp(), cp(), cp(), cp()], head(10));
        let v = g.validate(8);
        assert_eq!(v, vec![Violation::LengthExceedsBound { length: 10, max: 8 }]);
        assert!(v[0].to_string().starts_with("length exceeds bound"));
    }

    #[test]
    fn validate_block_rules() {
        let too_long = Genome::new(
            vec![vec![
                LayerGene::conv(16, 3),
                LayerGene::conv(16, 3),
                LayerGene::conv(16, 3),
                LayerGene::pool(PoolMode::Max),
            ]],
            head(10),
        );
        assert!(matches!(
            too_long.validate(24)[..],
            [Violation::FeatureBlockTooLong { block: 0, len: 4 }]
        ));

        let conv_after_pool = Genome::new(
            vec![vec![
                LayerGene::conv(16, 3),
                LayerGene::pool(PoolMode::Max),
                LayerGene::conv(16, 3),
            ]],
            head(10),
        );
        assert_eq!(
            conv_after_pool.validate(24),
            vec![Violation::ConvAfterPool { block: 0 }]
        );

        let no_classifier = Genome::new(vec![cp()], vec![LayerGene::dense(64), LayerGene::BatchNorm]);
        assert_eq!(no_classifier.validate(24), vec![Violation::HeadWithoutClassifier]);

        let headless = Genome {
            blocks: vec![Block::feature(cp())],
        };
        assert_eq!(headless.validate(24), vec![Violation::MissingHead]);

        let dense_in_features = Genome::new(vec![vec![LayerGene::conv(16, 3), LayerGene::dense(3)]], head(10));
        assert_eq!(
            dense_in_features.validate(24),
            vec![Violation::ForeignGene { block: 0, layer: 1 }]
        );

        let bad_rate = Genome::new(vec![], vec![LayerGene::dropout(1.0), LayerGene::dense(10)]);
        assert!(matches!(
            bad_rate.validate(24)[..],
            [Violation::BadParameter { block: 0, layer: 0, .. }]
        ));
    }

    #[test]
    fn dense_only_genome_is_valid() {
        assert!(Genome::new(vec![], head(10)).is_valid(0));
    }

    #[test]
    fn canonical_json_is_sorted_and_round_trips() {
        let g = Genome::new(
            vec![cp()],
            vec![
                LayerGene::dense(128),
                LayerGene::BatchNorm,
                LayerGene::dropout(0.5),
                LayerGene::dense(10),
            ],
        );
        let text = g.to_canonical_json();
        assert_eq!(
            text,
            r#"{"blocks":[{"kind":"feature","layers":[{"filters":32,"kernel":3,"kind":"conv","padding":"same","stride":1},{"kind":"pool","mode":"max","stride":2,"window":2}]},{"kind":"head","layers":[{"kind":"dense","units":128},{"kind":"batch_norm"},{"kind":"dropout","rate":0.5},{"kind":"dense","units":10}]}]}"#
        );
        let back = Genome::from_json(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn equal_genomes_serialize_identically() {
        let a = Genome::new(vec![cp()], head(10));
        let b = Genome::new(vec![cp()], head(10));
        assert_eq!(a.to_canonical_json().as_bytes(), b.to_canonical_json().as_bytes());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(Genome::from_json("{}").is_err());
        assert!(Genome::from_json("not json").is_err());
        assert!(Genome::from_json(r#"{"blocks":[{"kind":"feature","layers":[{"kind":"warp"}]}]}"#).is_err());
        assert!(Genome::from_json(r#"{"blocks":[],"extra":1}"#).is_err());
    }

    #[test]
    fn reblock_groups_greedily() {
        let c = LayerGene::conv(16, 3);
        let p = LayerGene::pool(PoolMode::Max);
        let flat = vec![
            c.clone(),
            p.clone(),
            c.clone(),
            c.clone(),
            p.clone(),
            c.clone(),
            p.clone(),
        ];
        let g = Genome::reblocked(&flat, head(10));
        let sizes: Vec<usize> = g.feature_blocks().map(|b| b.layers.len()).collect();
        assert_eq!(sizes, vec![2, 3, 2]);
        assert!(g.is_valid(24));
        assert_eq!(g.feature_genes(), flat);
    }
}
