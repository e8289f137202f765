use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PatchOrigin, Tiling};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            other => Err(Error::Parse(format!("unknown split tag '{other}'"))),
        }
    }
}

/// Ordered patch references for one split. Order is the seeded shuffle order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub patches: Vec<PatchOrigin>,
    pub split: SplitTag,
    pub seed: u64,
    pub tiling: Tiling,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

fn check_unique(patches: &[PatchOrigin]) -> Result<()> {
    let mut seen = HashSet::with_capacity(patches.len());
    for p in patches {
        if !seen.insert(p) {
            return Err(Error::Config(format!(
                "duplicate patch origin ({}, {}, {})",
                p.scene_id, p.row, p.col
            )));
        }
    }
    Ok(())
}

fn check_fraction(train_fraction: f64) -> Result<()> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    Ok(())
}

/// `floor(n * fraction)`, but at least one when `n >= 1`.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    // the epsilon keeps products like 10 * 0.7 from flooring to 6
    let raw = (n as f64 * train_fraction + 1e-9).floor() as usize;
    raw.max(1).min(n)
}

/// Seeded patch-level shuffle followed by a `train_fraction` cut.
pub fn split_dataset(
    patches: &[PatchOrigin],
    train_fraction: f64,
    seed: u64,
    tiling: Tiling,
) -> Result<(DatasetManifest, DatasetManifest)> {
    check_fraction(train_fraction)?;
    if patches.is_empty() {
        return Err(Error::EmptyDataset("no patches to split".into()));
    }
    check_unique(patches)?;
    let mut order = patches.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = train_count(order.len(), train_fraction);
    let val = order.split_off(n_train);
    Ok((
        DatasetManifest {
            patches: order,
            split: SplitTag::Train,
            seed,
            tiling,
        },
        DatasetManifest {
            patches: val,
            split: SplitTag::Val,
            seed,
            tiling,
        },
    ))
}

/// Like [`split_dataset`] but assigns whole scenes to one side, so no scene
/// contributes patches to both splits. The fraction applies to scenes.
pub fn split_by_scene(
    patches: &[PatchOrigin],
    train_fraction: f64,
    seed: u64,
    tiling: Tiling,
) -> Result<(DatasetManifest, DatasetManifest)> {
    check_fraction(train_fraction)?;
    if patches.is_empty() {
        return Err(Error::EmptyDataset("no patches to split".into()));
    }
    check_unique(patches)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes: Vec<&str> = patches
        .iter()
        .map(|p| p.scene_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    scenes.shuffle(&mut rng);
    let train_scenes: HashSet<&str> = scenes[..train_count(scenes.len(), train_fraction)]
        .iter()
        .copied()
        .collect();
    let mut order = patches.to_vec();
    order.shuffle(&mut rng);
    let (train, val): (Vec<_>, Vec<_>) = order
        .into_iter()
        .partition(|p| train_scenes.contains(p.scene_id.as_str()));
    Ok((
        DatasetManifest {
            patches: train,
            split: SplitTag::Train,
            seed,
            tiling,
        },
        DatasetManifest {
            patches: val,
            split: SplitTag::Val,
            seed,
            tiling,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origins(n: usize) -> Vec<PatchOrigin> {
        (0..n)
            .map(|i| PatchOrigin {
                scene_id: format!("s{}", i / 4),
                row: (i % 4) * 75,
                col: 0,
            })
            .collect()
    }

    #[test]
    fn paper_sized_split() {
        let (t, v) = split_dataset(&origins(3000), 0.7, 1, Tiling::default()).unwrap();
        assert_eq!((t.len(), v.len()), (2100, 900));
    }

    #[test]
    fn ten_patches_partition() {
        let all = origins(10);
        let (t, v) = split_dataset(&all, 0.7, 42, Tiling::default()).unwrap();
        assert_eq!((t.len(), v.len()), (7, 3));
        let mut union: Vec<_> = t.patches.iter().chain(&v.patches).cloned().collect();
        union.sort();
        let mut want = all.clone();
        want.sort();
        assert_eq!(union, want);
        let ts: HashSet<_> = t.patches.iter().collect();
        assert!(v.patches.iter().all(|p| !ts.contains(p)));
    }

    #[test]
    fn same_seed_same_split() {
        let all = origins(10);
        let a = split_dataset(&all, 0.7, 9, Tiling::default()).unwrap();
        let b = split_dataset(&all, 0.7, 9, Tiling::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minimum_one_train_patch() {
        let (t, v) = split_dataset(&origins(1), 0.7, 0, Tiling::default()).unwrap();
        assert_eq!((t.len(), v.len()), (1, 0));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            split_dataset(&[], 0.7, 0, Tiling::default()),
            Err(Error::EmptyDataset(_))
        ));
        assert!(split_dataset(&origins(4), 1.0, 0, Tiling::default()).unwrap_err().is_config());
        let mut dup = origins(3);
        dup.push(dup[0].clone());
        assert!(split_dataset(&dup, 0.5, 0, Tiling::default()).unwrap_err().is_config());
    }

    #[test]
    fn scene_disjoint_split_keeps_scenes_whole() {
        let (t, v) = split_by_scene(&origins(40), 0.7, 3, Tiling::default()).unwrap();
        let ts: HashSet<_> = t.patches.iter().map(|p| &p.scene_id).collect();
        assert!(v.patches.iter().all(|p| !ts.contains(&p.scene_id)));
        assert_eq!(t.len() + v.len(), 40);
        assert_eq!(ts.len(), 7);
    }

    proptest! {
        #[test]
        fn split_is_a_reproducible_partition(n in 1usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let all = origins(n);
            let (t, v) = split_dataset(&all, frac, seed, Tiling::default()).unwrap();
            prop_assert_eq!(t.len(), train_count(n, frac));
            prop_assert_eq!(t.len() + v.len(), n);
            let mut union: Vec<_> = t.patches.iter().chain(&v.patches).cloned().collect();
            union.sort();
            let mut want = all.clone();
            want.sort();
            prop_assert_eq!(union, want);
            let again = split_dataset(&all, frac, seed, Tiling::default()).unwrap();
            prop_assert_eq!((t, v), again);
        }
    }
}
