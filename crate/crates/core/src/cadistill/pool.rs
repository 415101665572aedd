use serde::{Deserialize, Serialize};

use crate::clarid::ClaRepBundle;
use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;
use crate::toy_data::ToyDataset;

/// Canonical Samples and Features grouped by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaRepPool {
    pub by_class: Vec<Vec<ClaRepBundle>>,
}

impl ClaRepPool {
    /// Every class in `0..num_classes` needs at least one bundle.
    pub fn from_bundles(bundles: Vec<ClaRepBundle>, num_classes: usize) -> Result<Self> {
        let mut by_class = vec![Vec::new(); num_classes];
        for b in bundles {
            if b.cond >= num_classes {
                return invalid(format!("bundle {} has class {} >= {num_classes}", b.seed_sample_id, b.cond));
            }
            by_class[b.cond].push(b);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("pool has no CLARep for class {c}")));
        }
        Ok(Self { by_class })
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.by_class[0][0].canonical_feature.len()
    }

    /// Uniform draw among the bundles of `class`.
    pub fn sample(&self, class: usize, rng: &mut Rng) -> Result<&ClaRepBundle> {
        match self.by_class.get(class) {
            Some(entries) if !entries.is_empty() => Ok(&entries[rng.below(entries.len())]),
            _ => Err(Error::Config(format!("pool has no CLARep for class {class}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClaRepBundle> {
        self.by_class.iter().flatten()
    }
}

/// Indices of a class-stratified random subset holding `fraction` of each
/// class (at least one per non-empty class), ascending.
pub fn select_pool_indices(data: &ToyDataset, fraction: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return invalid(format!("pool fraction {fraction} must lie in (0, 1]"));
    }
    let classes = data.samples.iter().map(|s| s.y).max().map_or(0, |m| m + 1);
    let mut chosen = Vec::new();
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.samples[i].y == c).collect();
        if idx.is_empty() {
            continue;
        }
        rng.shuffle(&mut idx);
        let keep = ((idx.len() as f64 * fraction).round() as usize).max(1);
        chosen.extend_from_slice(&idx[..keep]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_data::sample_dataset;

    pub(crate) fn bundle(id: usize, cond: usize) -> ClaRepBundle {
        ClaRepBundle {
            seed_sample_id: id,
            t_e: 500,
            k: 1,
            latent: [0.0, 0.0],
            canonical_sample: [4.0 * cond as f64, 0.0],
            canonical_feature: vec![id as f64, 1.0],
            cond,
        }
    }

    #[test]
    fn missing_class_is_a_config_error() {
        let err = ClaRepPool::from_bundles(vec![bundle(0, 0)], 2).unwrap_err();
        assert_eq!(err.code(), "config");
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn stratified_fraction() {
        let data = sample_dataset(1000, &mut Rng::new(1)).unwrap();
        let idx = select_pool_indices(&data, 0.1, &mut Rng::new(2)).unwrap();
        let ones = idx.iter().filter(|&&i| data.samples[i].y == 1).count();
        let n1 = data.of_class(1).count();
        assert_eq!(ones, (n1 as f64 * 0.1).round() as usize);
        assert!((95..=105).contains(&idx.len()));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(select_pool_indices(&data, 0.0, &mut Rng::new(2)).is_err());
    }
}
