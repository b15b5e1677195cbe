use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::store::Scene;
use crate::error::{Error, Result};
use crate::labels::Relationship;
use crate::numeric::rng;

const NUM_EXC: usize = Relationship::EXCEPTIONS.len();
const MAX_SWAP_PASSES: usize = 50;

/// Balance tolerance on per-split exception-class shares.
pub const BALANCE_TOLERANCE: f64 = 0.1;

/// Train/val/test scene ids; disjoint, not necessarily covering every scene
/// when the requested sizes sum to less than the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn parts(&self) -> [&[String]; 3] {
        [&self.train, &self.val, &self.test]
    }

    pub fn validate(&self, known: &BTreeSet<&str>) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.parts().into_iter().flatten() {
            if !known.contains(id.as_str()) {
                return Err(Error::Validation(format!("split names unknown scene `{id}`")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!(
                    "scene `{id}` appears in more than one split"
                )));
            }
        }
        Ok(())
    }
}

/// Exception counts of one scene, pooled over actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneProfile {
    pub id: String,
    pub exceptions: [u64; NUM_EXC],
}

impl SceneProfile {
    pub fn of(scene: &Scene) -> Self {
        let mut exceptions = [0; NUM_EXC];
        for labels in scene.record.annotations.values() {
            for ann in labels.values() {
                if ann.relationship.is_exception() {
                    exceptions[ann.relationship.index() - 2] += 1;
                }
            }
        }
        SceneProfile {
            id: scene.id().to_string(),
            exceptions,
        }
    }
}

/// Per split and exception class: the split's share of that class divided
/// by its share of scenes, minus one. `None` where the class never occurs
/// or the split is empty.
pub fn balance_deviation(profiles: &[SceneProfile], spec: &SplitSpec) -> [[Option<f64>; NUM_EXC]; 3] {
    let total: Vec<u64> = (0..NUM_EXC)
        .map(|c| profiles.iter().map(|p| p.exceptions[c]).sum())
        .collect();
    let mut out = [[None; NUM_EXC]; 3];
    for (s, part) in spec.parts().into_iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        let ids: BTreeSet<&str> = part.iter().map(String::as_str).collect();
        let share = part.len() as f64 / profiles.len() as f64;
        for c in 0..NUM_EXC {
            if total[c] == 0 {
                continue;
            }
            let count: u64 = profiles
                .iter()
                .filter(|p| ids.contains(p.id.as_str()))
                .map(|p| p.exceptions[c])
                .sum();
            out[s][c] = Some(count as f64 / total[c] as f64 / share - 1.0);
        }
    }
    out
}

struct Bins {
    counts: Vec<[f64; NUM_EXC]>,
    targets: Vec<[f64; NUM_EXC]>,
}

impl Bins {
    fn cost_of(&self, b: usize, counts: &[f64; NUM_EXC]) -> f64 {
        (0..NUM_EXC)
            .filter(|&c| self.targets[b][c] > 0.0)
            .map(|c| ((counts[c] - self.targets[b][c]) / self.targets[b][c]).powi(2))
            .sum()
    }
}

/// Greedy stratified assignment of scenes to splits of the given sizes,
/// followed by pairwise swaps that reduce the squared relative deviation
/// of every split's exception counts from its proportional target.
/// Deterministic per seed; scene ids are sorted within each split.
/// Scene counts for train/val/test from fractions of `n`; val and test
/// are rounded and train takes the rest.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let val = (n as f64 * fractions[1]).round() as usize;
    let test = (n as f64 * fractions[2]).round() as usize;
    if val + test > n {
        return Err(Error::Infeasible(format!(
            "{n} scenes cannot hold {val} val and {test} test scenes"
        )));
    }
    Ok([n - val - test, val, test])
}

pub fn stratified_split(profiles: &[SceneProfile], sizes: [usize; 3], seed: u64) -> Result<SplitSpec> {
    let requested: usize = sizes.iter().sum();
    if requested == 0 {
        return Err(Error::Infeasible("all split sizes are zero".into()));
    }
    if requested > profiles.len() {
        return Err(Error::Infeasible(format!(
            "split sizes {sizes:?} need {requested} scenes, only {} available",
            profiles.len()
        )));
    }
    let mut ids = BTreeSet::new();
    if let Some(dup) = profiles.iter().find(|p| !ids.insert(p.id.as_str())) {
        return Err(Error::Validation(format!("duplicate scene id `{}`", dup.id)));
    }
    // The fourth bin collects scenes left out of every split.
    let capacity = [sizes[0], sizes[1], sizes[2], profiles.len() - requested];
    let n = profiles.len() as f64;
    let totals: [f64; NUM_EXC] = std::array::from_fn(|c| profiles.iter().map(|p| p.exceptions[c] as f64).sum());
    let mut bins = Bins {
        counts: vec![[0.0; NUM_EXC]; 4],
        targets: capacity.iter().map(|&k| totals.map(|t| t * k as f64 / n)).collect(),
    };

    let mut order: Vec<usize> = (0..profiles.len()).collect();
    order.shuffle(&mut rng::derived(seed, "split-order"));
    let rarity = |i: usize| -> f64 {
        (0..NUM_EXC)
            .filter(|&c| totals[c] > 0.0)
            .map(|c| profiles[i].exceptions[c] as f64 / totals[c])
            .sum()
    };
    order.sort_by(|&a, &b| rarity(b).total_cmp(&rarity(a)));

    let mut assign = vec![usize::MAX; profiles.len()];
    let mut filled = [0usize; 4];
    for &i in &order {
        let exc = profiles[i].exceptions;
        let best = (0..4)
            .filter(|&b| filled[b] < capacity[b])
            .map(|b| {
                let need: f64 = (0..NUM_EXC)
                    .filter(|&c| exc[c] > 0 && bins.targets[b][c] > 0.0)
                    .map(|c| exc[c] as f64 * (bins.targets[b][c] - bins.counts[b][c]) / bins.targets[b][c])
                    .sum();
                let room = (capacity[b] - filled[b]) as f64 / capacity[b] as f64;
                (b, need, room)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1).then(x.2.total_cmp(&y.2)).then(y.0.cmp(&x.0)))
            .map(|(b, _, _)| b)
            .expect("capacity covers every scene");
        assign[i] = best;
        filled[best] += 1;
        for (total, &n) in bins.counts[best].iter_mut().zip(exc.iter()) {
            *total += n as f64;
        }
    }

    for _ in 0..MAX_SWAP_PASSES {
        let mut improved = false;
        for i in 0..profiles.len() {
            for j in i + 1..profiles.len() {
                let (a, b) = (assign[i], assign[j]);
                if a == b || profiles[i].exceptions == profiles[j].exceptions {
                    continue;
                }
                let delta: [f64; NUM_EXC] =
                    std::array::from_fn(|c| profiles[j].exceptions[c] as f64 - profiles[i].exceptions[c] as f64);
                let new_a: [f64; NUM_EXC] = std::array::from_fn(|c| bins.counts[a][c] + delta[c]);
                let new_b: [f64; NUM_EXC] = std::array::from_fn(|c| bins.counts[b][c] - delta[c]);
                let before = bins.cost_of(a, &bins.counts[a]) + bins.cost_of(b, &bins.counts[b]);
                let after = bins.cost_of(a, &new_a) + bins.cost_of(b, &new_b);
                if after < before - 1e-12 {
                    bins.counts[a] = new_a;
                    bins.counts[b] = new_b;
                    assign.swap(i, j);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let mut parts: [Vec<String>; 3] = Default::default();
    for (i, &b) in assign.iter().enumerate() {
        if b < 3 {
            parts[b].push(profiles[i].id.clone());
        }
    }
    for p in &mut parts {
        p.sort();
    }
    let [train, val, test] = parts;
    Ok(SplitSpec { seed, train, val, test })
}
