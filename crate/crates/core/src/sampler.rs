//! Diversity-driven pose sampling.
//!
//! * [`farthest_pose_sampling`] greedily grows a subset whose nearest-pair
//!   pose distance is as large as possible (max-min selection).
//! * [`cross_distribution_weights`] turns the dissimilarity of synthetic
//!   poses to the sampled real poses into a categorical distribution, so
//!   synthetic grasps unlike anything real are drawn more often.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{
    build_pose_vector, canonicalize, cosine_similarity, distance_with_norms, GraspRecord,
    PoseVector, Source,
};

/// Floor applied after min-max normalization so every pose stays reachable.
pub const PROBABILITY_FLOOR: f64 = 1e-3;

/// Defaults for the number of sampled real (`M`) and synthetic (`N`)
/// grasps per object.
pub const DEFAULT_REAL_SAMPLES: usize = 10;
pub const DEFAULT_SYNTHETIC_SAMPLES: usize = 500;

/// Sets at least this large update nearest distances in parallel.
const PARALLEL_MIN_LEN: usize = 4096;

/// Grasps of one object with their embeddings.
#[derive(Clone, Debug)]
pub struct PoseSet {
    pub object_id: String,
    pub source: Source,
    pub vectors: Vec<PoseVector>,
    pub records: Vec<GraspRecord>,
}

impl PoseSet {
    /// Canonicalizes and embeds `records`, which must all show `object_id`.
    pub fn from_records(object_id: &str, source: Source, records: Vec<GraspRecord>) -> Result<Self> {
        let vectors = records
            .iter()
            .map(|r| {
                if r.object_id != object_id {
                    return Err(Error::invalid(format!(
                        "record {} shows `{}`, not `{object_id}`",
                        r.id(),
                        r.object_id
                    )));
                }
                build_pose_vector(&canonicalize(r))
            })
            .collect::<Result<Vec<_>>>()?;
        check_dims(&vectors)?;
        Ok(PoseSet {
            object_id: object_id.to_owned(),
            source,
            vectors,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Elements at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PoseSet {
        PoseSet {
            object_id: self.object_id.clone(),
            source: self.source,
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Farthest pose sampling of `m` elements.
    pub fn farthest_subset(&self, m: usize, seed: u64) -> Result<(PoseSet, Selection)> {
        let sel = farthest_pose_sampling(&self.vectors, m, seed)?;
        Ok((self.subset(&sel.indices), sel))
    }
}

fn check_dims(vectors: &[PoseVector]) -> Result<()> {
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.dim() != first.dim()) {
            return Err(Error::invalid(format!(
                "pose vectors of dimension {} and {} in one set",
                first.dim(),
                v.dim()
            )));
        }
    }
    Ok(())
}

fn norms(vectors: &[PoseVector]) -> Result<Vec<f64>> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| match v.norm() {
            n if n > 0.0 => Ok(n),
            _ => Err(Error::invalid(format!("pose vector {i} has zero norm"))),
        })
        .collect()
}

/// Selected indices in selection order, plus the nearest-selected distance
/// of each element at the moment it was picked (`trace[k]` belongs to
/// `indices[k + 1]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub trace: Vec<f64>,
}

fn check_request(n: usize, m: usize, start: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("cannot sample from an empty pose set"));
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("sample size {m} outside 1..={n}")));
    }
    if start >= n {
        return Err(Error::invalid(format!("start index {start} outside 0..{n}")));
    }
    Ok(())
}

/// Farthest pose sampling with a seeded uniform choice of the first element.
pub fn farthest_pose_sampling(vectors: &[PoseVector], m: usize, seed: u64) -> Result<Selection> {
    if vectors.is_empty() {
        return Err(Error::invalid("cannot sample from an empty pose set"));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..vectors.len());
    farthest_pose_sampling_from(vectors, m, start)
}

/// Greedy max-min selection starting at `start`. Ties go to the lowest
/// index.
pub fn farthest_pose_sampling_from(vectors: &[PoseVector], m: usize, start: usize) -> Result<Selection> {
    let n = vectors.len();
    check_request(n, m, start)?;
    check_dims(vectors)?;
    let norms = norms(vectors)?;

    let mut nearest = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut sel = Selection {
        indices: Vec::with_capacity(m),
        trace: Vec::with_capacity(m.saturating_sub(1)),
    };
    let mut pick = start;
    loop {
        taken[pick] = true;
        sel.indices.push(pick);
        if sel.indices.len() == m {
            return Ok(sel);
        }
        let (pv, pn) = (vectors[pick].as_slice(), norms[pick]);
        let update = |(i, d): (usize, &mut f64)| {
            let dist = distance_with_norms(vectors[i].as_slice(), pv, norms[i], pn);
            if dist < *d {
                *d = dist;
            }
        };
        if n >= PARALLEL_MIN_LEN {
            nearest.par_iter_mut().enumerate().for_each(update);
        } else {
            nearest.iter_mut().enumerate().for_each(update);
        }
        let mut best = f64::NEG_INFINITY;
        for i in (0..n).filter(|&i| !taken[i]) {
            if nearest[i] > best {
                best = nearest[i];
                pick = i;
            }
        }
        sel.trace.push(best);
    }
}

/// Reference max-min selection that rescans every pairwise distance each
/// round, `O(M·|P|²)`. Used to cross-check [`farthest_pose_sampling_from`].
pub fn greedy_minmax_oracle(vectors: &[PoseVector], m: usize, start: usize) -> Result<Vec<usize>> {
    check_request(vectors.len(), m, start)?;
    let mut chosen = vec![start];
    while chosen.len() < m {
        let mut best: Option<usize> = None;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..vectors.len() {
            if chosen.contains(&i) {
                continue;
            }
            let mut d = f64::INFINITY;
            for &j in &chosen {
                d = d.min(crate::pose::pose_distance(&vectors[i], &vectors[j])?);
            }
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.expect("m ≤ |P| leaves a candidate"));
    }
    Ok(chosen)
}

/// Categorical distribution over a synthetic pose set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    pub object_id: String,
    pub probabilities: Vec<f64>,
}

impl SamplingDistribution {
    /// `k` independent draws with replacement.
    pub fn draw(&self, k: usize, seed: u64) -> Result<Vec<usize>> {
        draw(&self.probabilities, k, seed)
    }
}

/// Raw dissimilarity score `Σ_j (1 − cos(s_i, r_j))` of every synthetic
/// pose against the real set.
pub fn dissimilarity_scores(synthetic: &[PoseVector], real: &[PoseVector]) -> Result<Vec<f64>> {
    if synthetic.is_empty() || real.is_empty() {
        return Err(Error::invalid("cross-distribution sampling needs non-empty sets"));
    }
    synthetic
        .iter()
        .map(|s| {
            real.iter()
                .map(|r| cosine_similarity(s, r).map(|c| 1.0 - c))
                .sum::<Result<f64>>()
        })
        .collect()
}

/// Min-max normalizes the dissimilarity scores, floors them at
/// [`PROBABILITY_FLOOR`] and rescales to a probability vector.
pub fn cross_distribution_weights(
    object_id: &str,
    synthetic: &[PoseVector],
    real: &[PoseVector],
) -> Result<SamplingDistribution> {
    let scores = dissimilarity_scores(synthetic, real)?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = scores.len();
    let probabilities = if hi - lo <= 1e-12 * hi.abs().max(1.0) {
        vec![1.0 / n as f64; n]
    } else {
        let floored: Vec<f64> = scores
            .iter()
            .map(|s| ((s - lo) / (hi - lo)).max(PROBABILITY_FLOOR))
            .collect();
        let total: f64 = floored.iter().sum();
        floored.iter().map(|f| f / total).collect()
    };
    Ok(SamplingDistribution {
        object_id: object_id.to_owned(),
        probabilities,
    })
}

/// [`cross_distribution_weights`] over pose sets of the same object.
pub fn cross_distribution_weights_for(synthetic: &PoseSet, real: &PoseSet) -> Result<SamplingDistribution> {
    if synthetic.object_id != real.object_id {
        return Err(Error::invalid(format!(
            "cannot weight `{}` poses against `{}`",
            synthetic.object_id, real.object_id
        )));
    }
    if let (Some(s), Some(r)) = (synthetic.vectors.first(), real.vectors.first()) {
        if s.dim() != r.dim() {
            return Err(Error::invalid("synthetic and real pose dimensions differ"));
        }
    }
    cross_distribution_weights(&synthetic.object_id, &synthetic.vectors, &real.vectors)
}

/// `k` seeded draws with replacement from a categorical distribution.
pub fn draw(probabilities: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(probabilities)
        .map_err(|e| Error::invalid(format!("bad sampling distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..k).map(|_| dist.sample(&mut rng)).collect())
}

/// Histogram of pairwise cosine similarities between two sets over
/// `[-1, 1]` in `bins` equal bins.
pub fn similarity_histogram(a: &[PoseVector], b: &[PoseVector], bins: usize) -> Result<Vec<u64>> {
    let mut hist = vec![0u64; bins.max(1)];
    for x in a {
        for y in b {
            let s = cosine_similarity(x, y)?;
            let bin = (((s + 1.0) / 2.0) * hist.len() as f64) as usize;
            let last = hist.len() - 1;
            hist[bin.min(last)] += 1;
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit2(deg: f64) -> PoseVector {
        let r = deg.to_radians();
        PoseVector::new(vec![r.cos(), r.sin()]).unwrap()
    }

    fn vecs(rows: &[&[f64]]) -> Vec<PoseVector> {
        rows.iter().map(|r| PoseVector::new(r.to_vec()).unwrap()).collect()
    }

    #[test]
    fn toy_angles_pick_extremes() {
        let set: Vec<_> = [0.0, 1.0, 2.0, 90.0, 91.0, 180.0].map(unit2).to_vec();
        let sel = farthest_pose_sampling_from(&set, 3, 0).unwrap();
        assert_eq!(sel.indices, vec![0, 5, 3]);
        assert_eq!(greedy_minmax_oracle(&set, 3, 0).unwrap(), vec![0, 5, 3]);
    }

    #[test]
    fn full_selection_is_a_permutation() {
        let set: Vec<_> = (0..9).map(|i| unit2(i as f64 * 17.0)).collect();
        let mut idx = farthest_pose_sampling(&set, 9, 4).unwrap().indices;
        idx.sort();
        assert_eq!(idx, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn single_selection_is_the_seeded_start() {
        let set: Vec<_> = (0..9).map(|i| unit2(i as f64 * 17.0)).collect();
        let start = ChaCha8Rng::seed_from_u64(42).random_range(0..9);
        assert_eq!(farthest_pose_sampling(&set, 1, 42).unwrap().indices, vec![start]);
        assert_eq!(greedy_minmax_oracle(&set, 1, 6).unwrap(), vec![6]);
    }

    #[test]
    fn duplicates_come_last() {
        let set = vecs(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.2], &[0.0, 1.0]]);
        let sel = farthest_pose_sampling_from(&set, 5, 0).unwrap();
        assert_eq!(&sel.trace[2..], &[0.0, 0.0]);
        let tail: Vec<_> = sel.indices[3..].to_vec();
        assert!(tail.contains(&1) && tail.contains(&4));
        assert_eq!(greedy_minmax_oracle(&set, 5, 0).unwrap(), sel.indices);
    }

    #[test]
    fn invalid_requests() {
        let set = vecs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(farthest_pose_sampling(&[], 1, 0).is_err());
        assert!(farthest_pose_sampling(&set, 0, 0).is_err());
        assert!(farthest_pose_sampling(&set, 3, 0).is_err());
        assert!(greedy_minmax_oracle(&set, 3, 0).is_err());
        let mixed = vecs(&[&[1.0, 0.0], &[0.0, 1.0, 0.0]]);
        assert!(farthest_pose_sampling(&mixed, 2, 0).is_err());
        let zero = vecs(&[&[1.0, 0.0], &[0.0, 0.0]]);
        assert!(farthest_pose_sampling(&zero, 2, 0).is_err());
    }

    #[test]
    fn single_synthetic_pose_gets_all_mass() {
        let d = cross_distribution_weights("o", &vecs(&[&[0.3, 0.4]]), &vecs(&[&[1.0, 0.0]])).unwrap();
        assert_eq!(d.probabilities, vec![1.0]);
    }

    #[test]
    fn hand_computed_three_pose_example() {
        // Raw scores {0, 1, 2} → min-max {0, ½, 1} → floored {1e-3, ½, 1},
        // total 1.501.
        let real = vecs(&[&[1.0, 0.0]]);
        let syn = vecs(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]]);
        let d = cross_distribution_weights("o", &syn, &real).unwrap();
        let expected = [1.0 / 1501.0, 500.0 / 1501.0, 1000.0 / 1501.0];
        for (p, e) in d.probabilities.iter().zip(expected) {
            assert!((p - e).abs() < 1e-9, "{p} vs {e}");
        }
    }

    #[test]
    fn equal_scores_give_uniform() {
        let real = vecs(&[&[1.0, 0.0]]);
        let syn = vecs(&[&[0.0, 1.0], &[0.0, -1.0], &[0.0, 2.0]]);
        let d = cross_distribution_weights("o", &syn, &real).unwrap();
        assert_eq!(d.probabilities, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn weight_errors() {
        let a = vecs(&[&[1.0, 0.0]]);
        assert!(cross_distribution_weights("o", &[], &a).is_err());
        assert!(cross_distribution_weights("o", &a, &[]).is_err());
        assert!(cross_distribution_weights("o", &a, &vecs(&[&[1.0, 0.0, 0.0]])).is_err());
    }

    #[test]
    fn draws() {
        assert!(draw(&[0.0, 1.0, 0.0], 50, 1).unwrap().iter().all(|&i| i == 1));
        let counts = draw(&[0.25; 4], 100_000, 9).unwrap().iter().fold([0usize; 4], |mut c, &i| {
            c[i] += 1;
            c
        });
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.25).abs() < 0.01);
        }
        assert_eq!(draw(&[0.2, 0.8], 100, 3).unwrap(), draw(&[0.2, 0.8], 100, 3).unwrap());
    }

    #[test]
    fn histogram_counts_all_pairs() {
        let a = vecs(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let h = similarity_histogram(&a, &a, 4).unwrap();
        assert_eq!(h.iter().sum::<u64>(), 4);
        assert_eq!(h[3], 2);
    }
}
