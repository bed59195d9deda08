//! Open-space descriptors: pseudo-unknown feature vectors on the radius-`s`
//! sphere, supervised toward the unknown channel.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::rng::{Rng as StreamRng, RngState};

/// Rows with norm below this are redrawn before rescaling.
pub const MIN_DRAW_NORM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescriptorMode {
    /// Coordinates i.i.d. uniform on `[-s, s]`, then rescaled to norm `s`.
    #[default]
    CubeProject,
    /// Gaussian draw rescaled to norm `s`: uniform on the sphere.
    SphereUniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorBatch {
    /// `M × d`, every row of norm `s`.
    pub features: Tensor,
    /// Label of the unknown channel (equal to the number of known classes).
    pub label: usize,
    /// Generator position before the batch was drawn.
    pub origin: RngState,
}

impl DescriptorBatch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `count` descriptors of dimension `dim` and norm `scale`.
pub fn sample_descriptors(
    count: usize,
    dim: usize,
    scale: f64,
    mode: DescriptorMode,
    label: usize,
    rng: &mut StreamRng,
) -> DescriptorBatch {
    assert!(dim >= 1 && scale > 0.0, "descriptors need dim >= 1 and scale > 0");
    let origin = RngState::capture(rng);
    let mut data = Vec::with_capacity(count * dim);
    let mut row = vec![0.0; dim];
    for _ in 0..count {
        let norm = loop {
            for v in row.iter_mut() {
                *v = match mode {
                    DescriptorMode::CubeProject => rng.random_range(-scale..=scale),
                    DescriptorMode::SphereUniform => rng.sample::<f64, _>(StandardNormal),
                };
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n >= MIN_DRAW_NORM {
                break n;
            }
        };
        data.extend(row.iter().map(|v| v * scale / norm));
    }
    DescriptorBatch {
        features: Tensor::new(vec![count, dim], data).expect("shape"),
        label,
        origin,
    }
}
