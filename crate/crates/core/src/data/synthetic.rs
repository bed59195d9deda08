//! Seeded 2-D Gaussian-mixture open-set task.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChannelStats, OpenSetSplit, Samples, TrialData};
use crate::model::InputShape;
use crate::rng::{stream_rng, Stream};

/// Isotropic Gaussian classes with means evenly spaced on a circle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMixture {
    pub classes: usize,
    pub per_class: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for GaussianMixture {
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 500,
            radius: 4.0,
            sigma: 0.6,
        }
    }
}

impl GaussianMixture {
    pub fn mean(&self, class: usize) -> [f64; 2] {
        let angle = std::f64::consts::TAU * class as f64 / self.classes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    /// `per_class` points of every class, class-major, from stream `part`.
    pub fn sample(&self, seed: u64, part: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = stream_rng(seed, Stream::Synthetic, part);
        let mut values = Vec::with_capacity(self.classes * self.per_class * 2);
        let mut labels = Vec::with_capacity(self.classes * self.per_class);
        for c in 0..self.classes {
            let [mx, my] = self.mean(c);
            for _ in 0..self.per_class {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                values.push(mx + self.sigma * dx);
                values.push(my + self.sigma * dy);
                labels.push(c);
            }
        }
        (values, labels)
    }

    /// Train and test draws under `split`. Features are standardized with
    /// statistics of the known training points.
    pub fn trial_data(&self, seed: u64, split: &OpenSetSplit) -> TrialData {
        let input = InputShape::flat(2);
        let c = split.known.len();
        let select = |(values, labels): (Vec<f64>, Vec<usize>), want_known: bool| {
            let mut out = Samples::default();
            for (i, &class) in labels.iter().enumerate() {
                let label = split.remap(class);
                if label.is_some() != want_known {
                    continue;
                }
                out.values.extend_from_slice(&values[2 * i..2 * i + 2]);
                out.labels.push(label.unwrap_or(c));
                out.source_class.push(class);
                out.ids.push(i);
            }
            out
        };
        let train = select(self.sample(seed, 0), true);
        let test = self.sample(seed, 1);
        let stats = ChannelStats::compute(&train.values, input);
        TrialData {
            input,
            num_classes: c,
            test_known: select(test.clone(), true),
            test_unknown: select(test, false),
            train,
            stats,
            split: split.clone(),
        }
    }
}
