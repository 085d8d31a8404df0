//! Fake ground truths for the discriminator: geometry-erased and
//! semantics-shuffled label grids.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};
use crate::voxel_data::{LabelGrid, EMPTY, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbConfig {
    pub pg_range: [f64; 2],
    pub ps_range: [f64; 2],
    pub seed_stream: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig { pg_range: [0.1, 0.9], ps_range: [0.1, 0.9], seed_stream: 3 }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("pg_range", self.pg_range), ("ps_range", self.ps_range)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(SscError::Config(format!("{name} must satisfy 0 < low <= high <= 1, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn sample_pg<R: Rng>(&self, rng: &mut R) -> f64 {
        sample_range(self.pg_range, rng)
    }
}

fn sample_range<R: Rng>([lo, hi]: [f64; 2], rng: &mut R) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PerturbKind {
    Geometric,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbRecord {
    pub kind: PerturbKind,
    /// `[p_G]` for geometric records, one `p_S` per selected class otherwise.
    pub probabilities: Vec<f64>,
    /// Number of selected categories.
    pub n: usize,
    /// Number of distinct non-empty classes present in the input.
    pub m: usize,
    pub pairs: Vec<(u8, u8)>,
    pub changed: usize,
}

/// Erases each non-empty, non-IGNORE voxel with probability `pg`.
pub fn perturb_geometric<R: Rng>(y: &LabelGrid, pg: f64, rng: &mut R) -> Result<(LabelGrid, PerturbRecord)> {
    if !(0.0..=1.0).contains(&pg) {
        return Err(SscError::InvalidInput(format!("p_G must be in [0,1], got {pg}")));
    }
    let mut out = y.clone();
    let mut changed = 0;
    for l in out.labels.iter_mut() {
        if *l != EMPTY && *l != IGNORE {
            let r: f64 = rng.gen();
            if r < pg {
                *l = EMPTY;
                changed += 1;
            }
        }
    }
    let m = y.present_classes().len();
    let rec = PerturbRecord { kind: PerturbKind::Geometric, probabilities: vec![pg], n: 0, m, pairs: vec![], changed };
    Ok((out, rec))
}

/// Selected classes with their targets and flip probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPlan {
    pub m: usize,
    pub entries: Vec<(u8, u8, f64)>,
}

/// Draws `n ~ U{1..m}`, `n` distinct present classes, and per class a target
/// `c_k != c_j` from `1..=num_classes` and `p_S ~ U(ps_range)`.
pub fn sample_semantic_plan<R: Rng>(
    y: &LabelGrid,
    cfg: &PerturbConfig,
    num_classes: usize,
    rng: &mut R,
) -> Result<SemanticPlan> {
    if num_classes < 2 || num_classes >= IGNORE as usize {
        return Err(SscError::Config(format!("class count {num_classes} out of range")));
    }
    let present = y.present_classes();
    let m = present.len();
    if m < 2 {
        return Ok(SemanticPlan { m, entries: vec![] });
    }
    let n = rng.gen_range(1..=m);
    let chosen: Vec<u8> = present.choose_multiple(rng, n).copied().collect();
    let entries = chosen
        .into_iter()
        .map(|cj| {
            let p = sample_range(cfg.ps_range, rng);
            let mut ck = rng.gen_range(1..num_classes as u8);
            if ck >= cj {
                ck += 1;
            }
            (cj, ck, p)
        })
        .collect();
    Ok(SemanticPlan { m, entries })
}

/// Remaps each voxel of every planned class to its target with the planned
/// probability, one uniform draw per voxel of a selected class.
pub fn apply_semantic_plan<R: Rng>(y: &LabelGrid, plan: &SemanticPlan, rng: &mut R) -> (LabelGrid, PerturbRecord) {
    let mut table: [Option<(u8, f64)>; 256] = [None; 256];
    for &(cj, ck, p) in &plan.entries {
        table[cj as usize] = Some((ck, p));
    }
    let mut out = y.clone();
    let mut changed = 0;
    for l in out.labels.iter_mut() {
        if let Some((ck, p)) = table[*l as usize] {
            if *l != EMPTY && *l != IGNORE && rng.gen::<f64>() < p {
                *l = ck;
                changed += 1;
            }
        }
    }
    let rec = PerturbRecord {
        kind: PerturbKind::Semantic,
        probabilities: plan.entries.iter().map(|e| e.2).collect(),
        n: plan.entries.len(),
        m: plan.m,
        pairs: plan.entries.iter().map(|e| (e.0, e.1)).collect(),
        changed,
    };
    (out, rec)
}

pub fn perturb_semantic<R: Rng>(
    y: &LabelGrid,
    cfg: &PerturbConfig,
    num_classes: usize,
    rng: &mut R,
) -> Result<(LabelGrid, PerturbRecord)> {
    let plan = sample_semantic_plan(y, cfg, num_classes, rng)?;
    Ok(apply_semantic_plan(y, &plan, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(seed: u64, classes: u8, dims: [usize; 3]) -> LabelGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        let labels = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0..=3 => EMPTY,
                4 => IGNORE,
                _ => rng.gen_range(1..=classes),
            })
            .collect();
        LabelGrid::new(dims, labels).unwrap()
    }

    #[test]
    fn geometric_edge_probabilities() {
        let y = random_grid(1, 11, [8, 8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(perturb_geometric(&y, 0.0, &mut rng).unwrap().0, y);
        let (g, rec) = perturb_geometric(&y, 1.0, &mut rng).unwrap();
        assert_eq!(g.occupied_count(), 0);
        assert_eq!(rec.changed, y.occupied_count());
        assert!(g.labels.iter().zip(&y.labels).all(|(&a, &b)| b != IGNORE || a == IGNORE));
    }

    #[test]
    fn geometric_half_within_binomial_band() {
        let y = LabelGrid::new([25, 20, 20], vec![3; 10_000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, _) = perturb_geometric(&y, 0.5, &mut rng).unwrap();
        let frac = (10_000 - g.occupied_count()) as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.015, "{frac}");
    }

    #[test]
    fn geometric_mean_over_trials() {
        let y = LabelGrid::new([10, 10, 10], vec![2; 1000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean: f64 = (0..1000)
            .map(|_| perturb_geometric(&y, 0.3, &mut rng).unwrap().1.changed as f64 / 1000.0)
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 0.3).abs() < 0.01);
    }

    #[test]
    fn single_class_is_identity() {
        let y = LabelGrid::new([4, 4, 4], (0..64).map(|i| if i % 3 == 0 { 5 } else { 0 }).collect()).unwrap();
        let (s, rec) = perturb_semantic(&y, &PerturbConfig::default(), 11, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s, y);
        assert_eq!((rec.n, rec.m, rec.changed), (0, 1, 0));
    }

    #[test]
    fn forced_full_remap_matches_per_voxel_oracle() {
        let y = random_grid(4, 6, [8, 8, 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let present = y.present_classes();
        let entries: Vec<(u8, u8, f64)> =
            present.iter().map(|&c| (c, if c == 6 { 1 } else { c + 1 }, 1.0)).collect();
        let plan = SemanticPlan { m: present.len(), entries: entries.clone() };
        let (s, rec) = apply_semantic_plan(&y, &plan, &mut rng);
        for (i, &old) in y.labels.iter().enumerate() {
            let want = entries.iter().find(|e| e.0 == old).map_or(old, |e| e.1);
            assert_eq!(s.labels[i], want);
        }
        assert_eq!(rec.n, present.len());
        assert_eq!(rec.changed, y.occupied_count());
    }

    #[test]
    fn config_validation() {
        assert!(PerturbConfig::default().validate().is_ok());
        let bad = PerturbConfig { pg_range: [0.0, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PerturbConfig { ps_range: [0.6, 0.5], ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn geometric_only_erases(seed in any::<u64>(), pg in 0.0f64..=1.0) {
            let y = random_grid(seed, 11, [6, 5, 4]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let (g, rec) = perturb_geometric(&y, pg, &mut rng).unwrap();
            let mut changed = 0;
            for (&a, &b) in g.labels.iter().zip(&y.labels) {
                prop_assert!(a == b || a == EMPTY);
                if b == EMPTY || b == IGNORE {
                    prop_assert_eq!(a, b);
                }
                changed += (a != b) as usize;
            }
            prop_assert_eq!(changed, rec.changed);
        }

        #[test]
        fn semantic_preserves_occupancy(seed in any::<u64>(), classes in 2u8..14) {
            let y = random_grid(seed, classes, [6, 5, 4]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
            let (s, rec) = perturb_semantic(&y, &PerturbConfig::default(), classes as usize, &mut rng).unwrap();
            prop_assert!(rec.n <= rec.m);
            for &(cj, ck) in &rec.pairs {
                prop_assert!(cj != ck && (1..=classes).contains(&cj) && (1..=classes).contains(&ck));
            }
            for (&a, &b) in s.labels.iter().zip(&y.labels) {
                if b == EMPTY || b == IGNORE {
                    prop_assert_eq!(a, b);
                } else {
                    prop_assert!(a != EMPTY && a != IGNORE && a <= classes);
                    if a != b {
                        prop_assert!(rec.pairs.contains(&(b, a)));
                    }
                }
            }
        }

        #[test]
        fn perturbations_are_deterministic(seed in any::<u64>()) {
            let y = random_grid(seed, 11, [5, 5, 5]);
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = perturb_geometric(&y, 0.4, &mut rng).unwrap();
                let s = perturb_semantic(&y, &PerturbConfig::default(), 11, &mut rng).unwrap();
                (g, s)
            };
            prop_assert_eq!(run(), run());
        }
    }
}
