//! Brute-force metric oracles shared by the integration suites.
#![allow(dead_code)]

use omcl_core::metrics::ScoredPrediction;
use omcl_core::rng::{stream_rng, Stream};
use rand::Rng;

/// Counts every known/unknown pair; ties are worth one half.
pub fn auroc_oracle(known: &[f64], unknown: &[f64]) -> f64 {
    let mut wins = 0.0;
    for k in known {
        for u in unknown {
            if k > u {
                wins += 1.0;
            } else if k == u {
                wins += 0.5;
            }
        }
    }
    wins / (known.len() * unknown.len()) as f64
}

/// Recounts CCR and FPR from scratch at every distinct threshold.
pub fn oscr_oracle(preds: &[ScoredPrediction]) -> f64 {
    let known: Vec<&ScoredPrediction> = preds.iter().filter(|p| p.truth.is_some()).collect();
    let unknown: Vec<&ScoredPrediction> = preds.iter().filter(|p| p.truth.is_none()).collect();
    let mut thresholds: Vec<f64> = preds.iter().map(|p| p.known_score).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let point = |theta: f64| {
        let ccr = known
            .iter()
            .filter(|p| p.is_correct() && p.known_score >= theta)
            .count() as f64
            / known.len() as f64;
        let fpr = unknown.iter().filter(|p| p.known_score >= theta).count() as f64 / unknown.len() as f64;
        (fpr, ccr)
    };
    let mut pts: Vec<(f64, f64)> = thresholds.iter().map(|&t| point(t)).collect();
    pts.insert(0, (0.0, pts[0].1));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

pub fn known(correct: bool, score: f64) -> ScoredPrediction {
    ScoredPrediction {
        known_score: score,
        predicted: 1,
        truth: Some(if correct { 1 } else { 0 }),
    }
}

pub fn unknown(score: f64) -> ScoredPrediction {
    ScoredPrediction {
        known_score: score,
        predicted: 0,
        truth: None,
    }
}

/// Random instance with scores on a coarse grid so ties are frequent.
pub fn random_instance(seed: u64) -> Vec<ScoredPrediction> {
    let mut rng = stream_rng(seed, Stream::Noise, 0);
    let nk = rng.random_range(1..=120);
    let nu = rng.random_range(1..=80);
    let levels = rng.random_range(2..=25);
    let score = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(0..levels) as f64 / levels as f64;
    let mut out = Vec::new();
    for _ in 0..nk {
        let s = score(&mut rng);
        out.push(known(rng.random_bool(0.7), s));
    }
    for _ in 0..nu {
        let s = score(&mut rng);
        out.push(unknown(s));
    }
    out
}
