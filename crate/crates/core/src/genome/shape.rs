use super::{Genome, LayerGene, Padding};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Input image shape, height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct ImageShape {
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl ImageShape {
    pub const fn new(height: u32, width: u32, channels: u32) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }
}

impl From<[u32; 3]> for ImageShape {
    fn from([h, w, c]: [u32; 3]) -> Self {
        ImageShape::new(h, w, c)
    }
}

impl From<ImageShape> for [u32; 3] {
    fn from(s: ImageShape) -> Self {
        [s.height, s.width, s.channels]
    }
}

/// Output shape of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerShape {
    Spatial { height: u32, width: u32, channels: u32 },
    Flat { units: u32 },
}

impl LayerShape {
    fn features(&self) -> u64 {
        match *self {
            LayerShape::Spatial {
                height,
                width,
                channels,
            } => height as u64 * width as u64 * channels as u64,
            LayerShape::Flat { units } => units as u64,
        }
    }

    fn channels(&self) -> u64 {
        match *self {
            LayerShape::Spatial { channels, .. } => channels as u64,
            LayerShape::Flat { units } => units as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeReport {
    /// One entry per gene, in network order.
    pub layers: Vec<LayerShape>,
    pub total_params: u64,
}

/// A layer would shrink a spatial dimension below one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("out of shape at layer {layer}")]
pub struct OutOfShape {
    /// Index of the offending gene in network order.
    pub layer: usize,
}

fn conv_out(size: u32, kernel: u32, stride: u32, padding: Padding) -> Option<u32> {
    match padding {
        Padding::Same => Some(size.div_ceil(stride)),
        Padding::Valid if size >= kernel => Some((size - kernel) / stride + 1),
        Padding::Valid => None,
    }
}

fn pool_out(size: u32, window: u32, stride: u32) -> Option<u32> {
    (size >= window).then(|| (size - window) / stride + 1)
}

/// Propagates `input` through the genome layer by layer and counts learnable
/// parameters on the way.
pub fn infer_shapes(genome: &Genome, input: ImageShape) -> Result<ShapeReport, OutOfShape> {
    let mut current = LayerShape::Spatial {
        height: input.height,
        width: input.width,
        channels: input.channels,
    };
    let mut layers = Vec::new();
    let mut total: u64 = 0;

    for (idx, gene) in genome.layers().enumerate() {
        let oos = OutOfShape { layer: idx };
        let (next, params) = match (gene.clone(), current) {
            (
                LayerGene::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                },
                LayerShape::Spatial {
                    height,
                    width,
                    channels,
                },
            ) => {
                let h = conv_out(height, kernel, stride, padding).ok_or(oos)?;
                let w = conv_out(width, kernel, stride, padding).ok_or(oos)?;
                let params = (kernel as u64 * kernel as u64 * channels as u64 + 1) * filters as u64;
                (
                    LayerShape::Spatial {
                        height: h,
                        width: w,
                        channels: filters,
                    },
                    params,
                )
            }
            (
                LayerGene::Pool { window, stride, .. },
                LayerShape::Spatial {
                    height,
                    width,
                    channels,
                },
            ) => {
                let h = pool_out(height, window, stride).ok_or(oos)?;
                let w = pool_out(width, window, stride).ok_or(oos)?;
                (
                    LayerShape::Spatial {
                        height: h,
                        width: w,
                        channels,
                    },
                    0,
                )
            }
            // spatial genes after the flatten point have nothing to act on
            (LayerGene::Conv { .. } | LayerGene::Pool { .. }, LayerShape::Flat { .. }) => return Err(oos),
            (LayerGene::Dense { units }, shape) => (LayerShape::Flat { units }, (shape.features() + 1) * units as u64),
            (LayerGene::BatchNorm, shape) => (shape, 2 * shape.channels()),
            (LayerGene::Dropout { .. }, shape) => (shape, 0),
        };
        if let LayerShape::Spatial { height, width, .. } = next {
            if height < 1 || width < 1 {
                return Err(oos);
            }
        }
        total += params;
        layers.push(next);
        current = next;
    }

    Ok(ShapeReport {
        layers,
        total_params: total,
    })
}

/// Total learnable parameters of the genome on `input`.
pub fn count_params(genome: &Genome, input: ImageShape) -> Result<u64, OutOfShape> {
    infer_shapes(genome, input).map(|r| r.total_params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{LayerGene, PoolMode};

    #[test]
    fn same_conv_preserves_spatial_size() {
        let g = Genome::new(vec![vec![LayerGene::conv(32, 3)]], vec![LayerGene::dense(10)]);
        let report = infer_shapes(&g, ImageShape::new(32, 32, 3)).unwrap();
        assert_eq!(
            report.layers[0],
            LayerShape::Spatial {
                height: 32,
                width: 32,
                channels: 32
            }
        );
    }

    #[test]
    fn sixth_pool_on_32_goes_out_of_shape() {
        let mut features = vec![vec![LayerGene::conv(16, 3), LayerGene::pool(PoolMode::Max)]];
        for _ in 0..5 {
            features.push(vec![LayerGene::conv(16, 3), LayerGene::pool(PoolMode::Max)]);
        }
        let g = Genome::new(features, vec![LayerGene::dense(10)]);
        // pools sit at flat indices 1, 3, 5, 7, 9, 11
        assert_eq!(
            infer_shapes(&g, ImageShape::new(32, 32, 3)),
            Err(OutOfShape { layer: 11 })
        );

        let five = Genome {
            blocks: g.blocks[1..].to_vec(),
        };
        assert!(infer_shapes(&five, ImageShape::new(32, 32, 3)).is_ok());
    }

    #[test]
    fn dense_only_flattens_input() {
        let g = Genome::new(vec![], vec![LayerGene::dense(10)]);
        let report = infer_shapes(&g, ImageShape::new(28, 28, 1)).unwrap();
        assert_eq!(report.layers, vec![LayerShape::Flat { units: 10 }]);
        assert_eq!(report.total_params, 7850);
    }

    #[test]
    fn parameter_counts() {
        let conv = Genome::new(vec![vec![LayerGene::conv(32, 3)]], vec![]);
        assert_eq!(count_params(&conv, ImageShape::new(32, 32, 3)), Ok(896));

        let dense = Genome::new(vec![], vec![LayerGene::dense(10)]);
        assert_eq!(count_params(&dense, ImageShape::new(1, 1, 10)), Ok(110));

        let bn = Genome::new(
            vec![],
            vec![
                LayerGene::dense(64),
                LayerGene::BatchNorm,
                LayerGene::dropout(0.5),
                LayerGene::dense(10),
            ],
        );
        // (4+1)*64 + 2*64 + (64+1)*10
        assert_eq!(count_params(&bn, ImageShape::new(2, 2, 1)), Ok(320 + 128 + 650));
    }

    #[test]
    fn valid_padding_and_strides() {
        let g = Genome::new(
            vec![vec![LayerGene::Conv {
                filters: 8,
                kernel: 5,
                stride: 2,
                padding: Padding::Valid,
            }]],
            vec![LayerGene::dense(10)],
        );
        let r = infer_shapes(&g, ImageShape::new(28, 28, 1)).unwrap();
        assert_eq!(
            r.layers[0],
            LayerShape::Spatial {
                height: 12,
                width: 12,
                channels: 8
            }
        );
        assert_eq!(infer_shapes(&g, ImageShape::new(4, 4, 1)), Err(OutOfShape { layer: 0 }));
    }

    #[test]
    fn out_of_shape_propagates_through_count_params() {
        let g = Genome::new(
            vec![vec![LayerGene::conv(16, 3), LayerGene::pool(PoolMode::Avg)]],
            vec![LayerGene::dense(10)],
        );
        assert_eq!(count_params(&g, ImageShape::new(1, 1, 1)), Err(OutOfShape { layer: 1 }));
    }
}
