//! Known/unknown class partitions for the K-trial protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::rng::{stream_rng, Stream};

/// One trial's partition of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpenSetSplit {
    pub trial: usize,
    /// Sorted known class ids; position is the trial label.
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    pub master_seed: u64,
    pub pinned: Vec<usize>,
}

impl OpenSetSplit {
    /// Trial label of a source class, `None` for unknown classes.
    pub fn remap(&self, class: usize) -> Option<usize> {
        self.known.iter().position(|&k| k == class)
    }

    /// Source class of a trial label.
    pub fn source_class(&self, label: usize) -> Option<usize> {
        self.known.get(label).copied()
    }

    pub fn label_map(&self) -> BTreeMap<usize, usize> {
        self.known.iter().enumerate().map(|(i, &c)| (c, i)).collect()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// Draws `trials` partitions of `0..num_classes`.
///
/// Each known set holds every pinned class plus randomly chosen others, up to
/// `known_count` (default `⌈num_classes/2⌉`). Known sets are distinct across
/// trials whenever enough distinct sets exist.
pub fn make_splits(
    num_classes: usize,
    trials: usize,
    master_seed: u64,
    pinned: &[usize],
    known_count: Option<usize>,
) -> Result<Vec<OpenSetSplit>, DataError> {
    let known_count = known_count.unwrap_or(num_classes.div_ceil(2));
    let pinned_set: BTreeSet<usize> = pinned.iter().copied().collect();
    if num_classes < 2 || known_count == 0 || known_count >= num_classes {
        return Err(DataError::InvalidSplit(format!(
            "need 0 < known ({known_count}) < classes ({num_classes})"
        )));
    }
    if let Some(bad) = pinned_set.iter().find(|&&p| p >= num_classes) {
        return Err(DataError::InvalidSplit(format!(
            "pinned class {bad} outside 0..{num_classes}"
        )));
    }
    if pinned_set.len() > known_count {
        return Err(DataError::InvalidSplit(format!(
            "{} pinned classes exceed known-set size {known_count}",
            pinned_set.len()
        )));
    }
    let free: Vec<usize> = (0..num_classes).filter(|c| !pinned_set.contains(c)).collect();
    let need = known_count - pinned_set.len();
    let distinct = binomial(free.len(), need) >= trials as u128;

    let mut rng = stream_rng(master_seed, Stream::Splits, 0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(trials);
    while out.len() < trials {
        let mut pool = free.clone();
        pool.shuffle(&mut rng);
        let mut known: Vec<usize> = pinned_set.iter().copied().chain(pool[..need].iter().copied()).collect();
        known.sort_unstable();
        if distinct && !seen.insert(known.clone()) {
            continue;
        }
        let unknown = (0..num_classes).filter(|c| !known.contains(c)).collect();
        out.push(OpenSetSplit {
            trial: out.len(),
            known,
            unknown,
            master_seed,
            pinned: pinned_set.iter().copied().collect(),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub k: usize,
    pub known: Vec<usize>,
    pub unknown: Vec<usize>,
    /// Source class id (as a string key) → trial label.
    pub label_map: BTreeMap<String, usize>,
}

/// JSON split file shared between runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub dataset: String,
    pub master_seed: u64,
    #[serde(default)]
    pub pinned: Vec<usize>,
    pub trials: Vec<TrialEntry>,
}

impl SplitFile {
    pub fn new(dataset: &str, splits: &[OpenSetSplit]) -> Self {
        Self {
            dataset: dataset.to_string(),
            master_seed: splits.first().map_or(0, |s| s.master_seed),
            pinned: splits.first().map_or_else(Vec::new, |s| s.pinned.clone()),
            trials: splits
                .iter()
                .map(|s| TrialEntry {
                    k: s.trial,
                    known: s.known.clone(),
                    unknown: s.unknown.clone(),
                    label_map: s.label_map().into_iter().map(|(c, l)| (c.to_string(), l)).collect(),
                })
                .collect(),
        }
    }

    pub fn splits(&self) -> Result<Vec<OpenSetSplit>, DataError> {
        self.trials
            .iter()
            .map(|t| {
                let split = OpenSetSplit {
                    trial: t.k,
                    known: t.known.clone(),
                    unknown: t.unknown.clone(),
                    master_seed: self.master_seed,
                    pinned: self.pinned.clone(),
                };
                let overlap = t.known.iter().any(|c| t.unknown.contains(c));
                let map_ok = t
                    .label_map
                    .iter()
                    .all(|(c, l)| c.parse::<usize>().ok().and_then(|c| split.remap(c)) == Some(*l));
                if overlap || !map_ok || t.label_map.len() != t.known.len() {
                    return Err(DataError::InvalidSplit(format!("trial {} is inconsistent", t.k)));
                }
                Ok(split)
            })
            .collect()
    }

    pub fn trial(&self, k: usize) -> Result<OpenSetSplit, DataError> {
        self.splits()?
            .into_iter()
            .find(|s| s.trial == k)
            .ok_or_else(|| DataError::InvalidSplit(format!("no trial {k} in split file")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split file serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_json()).map_err(|e| DataError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(3, 1), 3);
        assert_eq!(binomial(3, 0), 1);
        assert_eq!(binomial(2, 3), 0);
    }

    #[test]
    fn too_many_pins() {
        assert!(make_splits(4, 3, 1, &[0, 1, 2], None).is_err());
        assert!(make_splits(4, 3, 1, &[9], None).is_err());
    }

    #[test]
    fn odd_class_count_rounds_up() {
        let s = make_splits(5, 2, 0, &[], None).unwrap();
        assert!(s.iter().all(|t| t.known.len() == 3 && t.unknown.len() == 2));
    }

    #[test]
    fn remap_round_trip() {
        let s = &make_splits(8, 1, 4, &[], None).unwrap()[0];
        for &c in &s.known {
            assert_eq!(s.source_class(s.remap(c).unwrap()), Some(c));
        }
        for &c in &s.unknown {
            assert_eq!(s.remap(c), None);
        }
    }
}
