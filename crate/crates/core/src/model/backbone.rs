use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::{Graph, Tensor, Var};

/// Height, width and channel count of one input sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    /// Flat feature vectors of length `n`.
    pub fn flat(n: usize) -> Self {
        Self::new(1, 1, n)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    /// Fully connected layers with ReLU between them; the last layer outputs the embedding.
    Mlp { hidden: Vec<usize> },
    /// conv3x3 → relu → maxpool2 → conv3x3 → relu → maxpool2 → flatten → fc.
    SmallCnn { channels: [usize; 2] },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Mlp { .. } => "mlp",
            Architecture::SmallCnn { .. } => "small-cnn",
        }
    }

    pub fn small_cnn() -> Self {
        Architecture::SmallCnn { channels: [32, 64] }
    }
}

/// Feature extractor mapping a batch of inputs to `embed_dim`-dimensional embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub arch: Architecture,
    pub input: InputShape,
    pub embed_dim: usize,
    /// Weight/bias tensors in forward order.
    pub params: Vec<Tensor>,
}

fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl Backbone {
    /// He-uniform weights, zero biases.
    pub fn new(
        arch: Architecture,
        input: InputShape,
        embed_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        if embed_dim == 0 || input.is_empty() {
            return Err(ModelError::InvalidConfig(format!(
                "embedding dimension {embed_dim} and input {input:?} must be nonzero"
            )));
        }
        let mut params = Vec::new();
        match &arch {
            Architecture::Mlp { hidden } => {
                let mut fan_in = input.len();
                for &width in hidden.iter().chain(std::iter::once(&embed_dim)) {
                    if width == 0 {
                        return Err(ModelError::InvalidConfig("mlp layer width 0".into()));
                    }
                    params.push(he_uniform(rng, &[fan_in, width], fan_in));
                    params.push(Tensor::zeros(&[width]));
                    fan_in = width;
                }
            }
            Architecture::SmallCnn { channels: [c1, c2] } => {
                if input.height < 4 || input.width < 4 || *c1 == 0 || *c2 == 0 {
                    return Err(ModelError::InvalidConfig(format!(
                        "small-cnn needs at least 4x4 inputs and nonzero channels, got {input:?} {c1}/{c2}"
                    )));
                }
                params.push(he_uniform(rng, &[3, 3, input.channels, *c1], 9 * input.channels));
                params.push(Tensor::zeros(&[*c1]));
                params.push(he_uniform(rng, &[3, 3, *c1, *c2], 9 * c1));
                params.push(Tensor::zeros(&[*c2]));
                let flat = (input.height / 4) * (input.width / 4) * c2;
                params.push(he_uniform(rng, &[flat, embed_dim], flat));
                params.push(Tensor::zeros(&[embed_dim]));
            }
        }
        Ok(Self {
            arch,
            input,
            embed_dim,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Places the parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    fn check_input(&self, images: &Tensor) -> Result<usize, ModelError> {
        let shape = images.shape();
        let InputShape {
            height,
            width,
            channels,
        } = self.input;
        let ok = match shape {
            [_, h, w, c] => (*h, *w, *c) == (height, width, channels),
            [_, n] => *n == self.input.len() && matches!(self.arch, Architecture::Mlp { .. }),
            _ => false,
        };
        if !ok {
            return Err(ModelError::InputShape {
                expected: vec![height, width, channels],
                got: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Embeddings `[batch, embed_dim]` for `images` (`[batch, h, w, ch]`) using parameter vars `params`.
    pub fn forward(&self, g: &mut Graph, params: &[Var], images: Var) -> Result<Var, ModelError> {
        let batch = self.check_input(g.value(images))?;
        match &self.arch {
            Architecture::Mlp { .. } => {
                let mut x = g.reshape(images, vec![batch, self.input.len()])?;
                let layers = params.len() / 2;
                for (i, pair) in params.chunks(2).enumerate() {
                    x = g.matmul(x, pair[0])?;
                    x = g.add_row_bias(x, pair[1])?;
                    if i + 1 < layers {
                        x = g.relu(x);
                    }
                }
                Ok(x)
            }
            Architecture::SmallCnn { .. } => {
                let x = g.reshape(
                    images,
                    vec![batch, self.input.height, self.input.width, self.input.channels],
                )?;
                let x = g.conv2d(x, params[0], params[1])?;
                let x = g.relu(x);
                let x = g.max_pool2(x)?;
                let x = g.conv2d(x, params[2], params[3])?;
                let x = g.relu(x);
                let x = g.max_pool2(x)?;
                let flat = g.value(x).row_len();
                let x = g.reshape(x, vec![batch, flat])?;
                let x = g.matmul(x, params[4])?;
                Ok(g.add_row_bias(x, params[5])?)
            }
        }
    }

    /// Gradient-free forward pass.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let x = g.constant(images.clone());
        let z = self.forward(&mut g, &params, x)?;
        Ok(g.value(z).clone())
    }
}
