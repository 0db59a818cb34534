//! Clustered batching, in-batch hard-negative selection, and the
//! between-epoch label-centroid refresh.
//!
//! Queries are grouped by a balanced k-means over their embeddings so each
//! training batch is drawn from one semantic neighborhood, which is what
//! makes in-batch negatives hard. Selection itself is an exact top-n by
//! inner product with positives excluded. Label centroids are recomputed
//! from scratch between epochs as unit-normalized means of the embeddings
//! of each label's training queries.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Mat, axpy, dot, l2_norm, normalize};
use crate::util::{derive_seed, seeded_rng};

/// A balanced partition of query indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterAssignment {
    pub num_clusters: usize,
    /// `assignment[q]` is the cluster id of query `q`.
    pub assignment: Vec<usize>,
}

impl ClusterAssignment {
    /// Member lists in ascending query order, indexed by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (q, &c) in self.assignment.iter().enumerate() {
            out[c].push(q);
        }
        out
    }
}

/// Greedy capacity-limited assignment: all (point, center) pairs ranked by
/// descending similarity (ties: point asc, center asc), first filling every
/// cluster to `floor(M/C)`, then letting the leftover `M mod C` points
/// claim one extra seat each. Sizes therefore differ by at most one.
fn balanced_assign(sims: &[f64], m: usize, c: usize) -> Vec<usize> {
    let mut order: Vec<u32> = (0..(m * c) as u32).collect();
    order.par_sort_unstable_by(|&a, &b| {
        sims[b as usize]
            .total_cmp(&sims[a as usize])
            .then_with(|| (a as usize / c).cmp(&(b as usize / c)))
            .then_with(|| (a as usize % c).cmp(&(b as usize % c)))
    });
    let floor = m / c;
    let extras = m % c;
    let mut assignment = vec![usize::MAX; m];
    let mut sizes = vec![0usize; c];
    let mut remaining = m;
    for phase in 0..2 {
        let cap = if phase == 0 { floor } else { floor + 1 };
        if remaining == 0 {
            break;
        }
        let mut extra_left = extras;
        for &pair in &order {
            if remaining == 0 {
                break;
            }
            let (p, k) = (pair as usize / c, pair as usize % c);
            if assignment[p] != usize::MAX || sizes[k] >= cap {
                continue;
            }
            if phase == 1 {
                if extra_left == 0 {
                    break;
                }
                extra_left -= 1;
            }
            assignment[p] = k;
            sizes[k] += 1;
            remaining -= 1;
        }
    }
    debug_assert_eq!(remaining, 0);
    assignment
}

/// Balanced k-means over unit-norm embedding rows. Centers start as a
/// seeded sample of the points; each of the fixed `iters` rounds runs the
/// greedy balanced assignment and then recomputes unit-normalized centers
/// (a center with no points, or a zero mean, keeps its previous value).
pub fn cluster_queries(
    embs: &Mat,
    num_clusters: usize,
    seed: u64,
    iters: usize,
) -> Result<ClusterAssignment> {
    let m = embs.rows();
    let d = embs.cols();
    if num_clusters == 0 || num_clusters > m {
        return Err(Error::Config(format!(
            "num_clusters {num_clusters} must be in 1..={m} (the number of queries)"
        )));
    }
    let mut rng = seeded_rng(derive_seed(seed, 0x636c7573)); // "clus"
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng);
    let mut centers = Mat::zeros(num_clusters, d);
    for (k, &q) in idx.iter().take(num_clusters).enumerate() {
        centers.row_mut(k).copy_from_slice(embs.row(q));
    }

    let mut assignment = Vec::new();
    for _ in 0..iters.max(1) {
        let mut sims = vec![0.0; m * num_clusters];
        sims.par_chunks_mut(num_clusters)
            .enumerate()
            .for_each(|(p, row)| {
                for (k, s) in row.iter_mut().enumerate() {
                    *s = dot(embs.row(p), centers.row(k));
                }
            });
        assignment = balanced_assign(&sims, m, num_clusters);

        let mut sums = Mat::zeros(num_clusters, d);
        let mut counts = vec![0usize; num_clusters];
        for (p, &k) in assignment.iter().enumerate() {
            axpy(sums.row_mut(k), 1.0, embs.row(p));
            counts[k] += 1;
        }
        for k in 0..num_clusters {
            if counts[k] == 0 {
                continue;
            }
            let row = sums.row_mut(k);
            let norm = normalize(row);
            if norm > 1e-12 {
                centers.row_mut(k).copy_from_slice(sums.row(k));
            }
        }
    }
    Ok(ClusterAssignment {
        num_clusters,
        assignment,
    })
}

/// Split each cluster's members into shuffled batches of `batch_size`,
/// keeping the short tail. Clusters are visited in id order, so output is
/// fully determined by the assignment and seed.
pub fn make_batches(c: &ClusterAssignment, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut rng = seeded_rng(derive_seed(seed, 0x62617463)); // "batc"
    let mut batches = Vec::new();
    for mut members in c.members() {
        members.shuffle(&mut rng);
        for chunk in members.chunks(batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    batches
}

/// The `n` candidates with the highest inner product to the query, after
/// excluding positives; ties broken by ascending label id. Returns fewer
/// than `n` ids when the non-positive candidates run out.
///
/// `positives` must be sorted ascending.
pub fn select_hard_negatives(
    query_emb: &[f64],
    candidate_label_embs: &Mat,
    candidate_ids: &[usize],
    positives: &[usize],
    count: usize,
) -> Vec<usize> {
    debug_assert_eq!(candidate_label_embs.rows(), candidate_ids.len());
    debug_assert!(positives.windows(2).all(|w| w[0] < w[1]));
    let mut scored: Vec<(f64, usize)> = candidate_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| positives.binary_search(id).is_err())
        .map(|(row, &id)| (dot(query_emb, candidate_label_embs.row(row)), id))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.truncate(count);
    scored.into_iter().map(|(_, id)| id).collect()
}

/// Per-label unit-norm mean query embeddings, with validity flags.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelCentroids {
    /// `L x d`; invalid rows hold whatever the previous refresh left.
    pub centroids: Mat,
    pub valid: Vec<bool>,
}

impl LabelCentroids {
    /// The state before any refresh: zero vectors, all invalid.
    pub fn empty(num_labels: usize, d: usize) -> Self {
        LabelCentroids {
            centroids: Mat::zeros(num_labels, d),
            valid: vec![false; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.centroids.rows()
    }
}

/// Recompute every label's centroid as the unit-normalized mean of the
/// embeddings of its training queries. A label with no queries keeps its
/// previous row and flag; a degenerate (zero-norm) mean keeps the previous
/// row but is flagged invalid so downstream mixing skips it.
pub fn refresh_centroids(
    query_embs: &Mat,
    gt: &[Vec<usize>],
    prev: &LabelCentroids,
) -> Result<LabelCentroids> {
    let l = prev.num_labels();
    let d = prev.centroids.cols();
    if query_embs.cols() != d {
        return Err(Error::Data(format!(
            "query dim {} != centroid dim {d}",
            query_embs.cols()
        )));
    }
    if gt.len() != query_embs.rows() {
        return Err(Error::Data(format!(
            "ground truth covers {} queries, embeddings have {}",
            gt.len(),
            query_embs.rows()
        )));
    }
    let mut sums = Mat::zeros(l, d);
    let mut counts = vec![0usize; l];
    for (q, labels) in gt.iter().enumerate() {
        for &lab in labels {
            if lab >= l {
                return Err(Error::Data(format!(
                    "label {lab} out of range (have {l} centroids)"
                )));
            }
            axpy(sums.row_mut(lab), 1.0, query_embs.row(q));
            counts[lab] += 1;
        }
    }
    let mut out = prev.clone();
    for lab in 0..l {
        if counts[lab] == 0 {
            continue;
        }
        let row = sums.row_mut(lab);
        let inv = 1.0 / counts[lab] as f64;
        for v in row.iter_mut() {
            *v *= inv;
        }
        if l2_norm(row) > 1e-12 {
            normalize(row);
            out.centroids.row_mut(lab).copy_from_slice(row);
            out.valid[lab] = true;
        } else {
            out.valid[lab] = false;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::util::seeded_rng;

    fn unit_rows(rows: usize, d: usize, seed: u64) -> Mat {
        let mut rng = seeded_rng(seed);
        let mut m = Mat::zeros(rows, d);
        for r in 0..rows {
            let row = m.row_mut(r);
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            normalize(row);
        }
        m
    }

    fn sizes(a: &ClusterAssignment) -> Vec<usize> {
        a.members().iter().map(Vec::len).collect()
    }

    #[test]
    fn one_cluster_holds_everything_and_m_clusters_are_singletons() {
        let e = unit_rows(7, 3, 1);
        let all = cluster_queries(&e, 1, 0, 5).unwrap();
        assert!(all.assignment.iter().all(|&c| c == 0));
        let singles = cluster_queries(&e, 7, 0, 5).unwrap();
        assert!(sizes(&singles).iter().all(|&s| s == 1));
    }

    #[test]
    fn cluster_sizes_are_balanced_within_one() {
        for (m, c) in [(10, 3), (24, 5), (17, 4), (50, 7), (9, 9)] {
            let e = unit_rows(m, 4, m as u64);
            let a = cluster_queries(&e, c, 3, 5).unwrap();
            assert_eq!(a.assignment.len(), m);
            let s = sizes(&a);
            let (lo, hi) = (s.iter().min().unwrap(), s.iter().max().unwrap());
            assert!(hi - lo <= 1, "m={m} c={c} sizes {s:?}");
            assert_eq!(s.iter().sum::<usize>(), m);
        }
    }

    #[test]
    fn two_separated_blobs_are_recovered() {
        let d = 6;
        let per = 40;
        let mut rng = seeded_rng(99);
        let mut mu = vec![0.0; d];
        for v in &mut mu {
            *v = rng.sample(StandardNormal);
        }
        normalize(&mut mu);
        let mut e = Mat::zeros(2 * per, d);
        for i in 0..2 * per {
            let sign = if i < per { 1.0 } else { -1.0 };
            let row = e.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *v = sign * mu[j] + 0.1 * noise;
            }
            normalize(row);
        }
        let a = cluster_queries(&e, 2, 5, 5).unwrap();
        // Majority vote maps cluster ids onto blob ids.
        let first_blob_in_0 = a.assignment[..per].iter().filter(|&&c| c == 0).count();
        let majority = if first_blob_in_0 * 2 >= per { 0 } else { 1 };
        let correct = a.assignment[..per]
            .iter()
            .filter(|&&c| c == majority)
            .count()
            + a.assignment[per..]
                .iter()
                .filter(|&&c| c != majority)
                .count();
        assert!(
            correct as f64 / (2 * per) as f64 >= 0.95,
            "blob recovery {correct}/{}",
            2 * per
        );
    }

    #[test]
    fn clustering_is_seed_deterministic() {
        let e = unit_rows(30, 4, 7);
        let a = cluster_queries(&e, 4, 11, 5).unwrap();
        let b = cluster_queries(&e, 4, 11, 5).unwrap();
        let c = cluster_queries(&e, 4, 12, 5).unwrap();
        assert_eq!(a, b);
        assert!(a != c || sizes(&a) == sizes(&c)); // different seed may still agree on tiny data
    }

    #[test]
    fn cluster_count_must_fit_the_data() {
        let e = unit_rows(3, 2, 0);
        assert!(cluster_queries(&e, 4, 0, 5).is_err());
        assert!(cluster_queries(&e, 0, 0, 5).is_err());
    }

    #[test]
    fn batches_partition_each_cluster_with_short_tail() {
        let a = ClusterAssignment {
            num_clusters: 2,
            assignment: vec![0, 0, 0, 0, 0, 1, 1, 1],
        };
        let batches = make_batches(&a, 2, 9);
        let lens: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![2, 2, 1, 2, 1]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
        for b in &batches {
            let c = a.assignment[b[0]];
            assert!(
                b.iter().all(|&q| a.assignment[q] == c),
                "batch crosses clusters"
            );
        }
        assert_eq!(batches, make_batches(&a, 2, 9));
        assert_ne!(batches, make_batches(&a, 2, 10));
    }

    #[test]
    fn hard_negatives_exclude_positives_and_rank_by_score() {
        // Scores 0.9 (positive), 0.8, 0.1 → the 0.8 label wins.
        let q = vec![1.0, 0.0];
        let cands = Mat::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.2], vec![0.1, 0.9]]);
        let ids = [10, 20, 30];
        let got = select_hard_negatives(&q, &cands, &ids, &[10], 1);
        assert_eq!(got, vec![20]);

        // All candidates positive → empty.
        let got = select_hard_negatives(&q, &cands, &ids, &[10, 20, 30], 2);
        assert!(got.is_empty());

        // Insufficient candidates → shorter list.
        let got = select_hard_negatives(&q, &cands, &ids, &[10], 5);
        assert_eq!(got, vec![20, 30]);
    }

    #[test]
    fn hard_negative_ties_break_by_ascending_id() {
        let q = vec![1.0, 0.0];
        let cands = Mat::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0], vec![0.5, 0.0]]);
        let got = select_hard_negatives(&q, &cands, &[31, 7, 19], &[], 2);
        assert_eq!(got, vec![7, 19]);
    }

    #[test]
    fn hard_negatives_match_extract_max_oracle() {
        let mut rng = seeded_rng(21);
        for _ in 0..20 {
            let n_cand = 50;
            let d = 5;
            let mut q = vec![0.0; d];
            for v in &mut q {
                *v = rng.sample(StandardNormal);
            }
            let cands = unit_rows(n_cand, d, rng.random());
            let ids: Vec<usize> = (0..n_cand).map(|i| i * 3).collect();
            let mut positives: Vec<usize> = ids
                .iter()
                .copied()
                .filter(|_| rng.random_range(0.0..1.0) < 0.2)
                .collect();
            positives.sort_unstable();
            let got = select_hard_negatives(&q, &cands, &ids, &positives, 5);

            // Oracle: repeatedly extract the best remaining candidate.
            let mut remaining: Vec<(f64, usize)> = ids
                .iter()
                .enumerate()
                .filter(|(_, id)| !positives.contains(id))
                .map(|(row, &id)| (dot(&q, cands.row(row)), id))
                .collect();
            let mut expect = Vec::new();
            for _ in 0..5.min(remaining.len()) {
                let best = remaining
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                    .map(|(i, _)| i)
                    .unwrap();
                expect.push(remaining.swap_remove(best).1);
            }
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn centroid_refresh_averages_and_normalizes() {
        let q = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]);
        let gt = vec![vec![0], vec![0, 1], vec![2]];
        let prev = LabelCentroids::empty(4, 2);
        let got = refresh_centroids(&q, &gt, &prev).unwrap();
        // Label 0: mean of (1,0),(0,1) → normalized (1,1)/√2.
        let r = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(got.centroids.row(0)[0], r, epsilon = 1e-12);
        assert_abs_diff_eq!(got.centroids.row(0)[1], r, epsilon = 1e-12);
        // Label 1: single query → exactly that embedding.
        assert_eq!(got.centroids.row(1), &[0.0, 1.0]);
        // Label 3: no queries → untouched, still invalid.
        assert_eq!(got.centroids.row(3), &[0.0, 0.0]);
        assert_eq!(got.valid, vec![true, true, true, false]);
        for (lab, &v) in got.valid.iter().enumerate() {
            if v {
                assert_abs_diff_eq!(l2_norm(got.centroids.row(lab)), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn degenerate_mean_keeps_previous_row_but_is_flagged() {
        let q = Mat::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let gt = vec![vec![0], vec![0]];
        let mut prev = LabelCentroids::empty(1, 2);
        prev.centroids.row_mut(0).copy_from_slice(&[0.0, 1.0]);
        prev.valid[0] = true;
        let got = refresh_centroids(&q, &gt, &prev).unwrap();
        assert_eq!(got.centroids.row(0), &[0.0, 1.0], "previous value retained");
        assert!(!got.valid[0], "degenerate refresh must invalidate the flag");
    }

    #[test]
    fn refresh_matches_per_label_recomputation() {
        let m = 40;
        let l = 12;
        let q = unit_rows(m, 5, 31);
        let mut rng = seeded_rng(32);
        let gt: Vec<Vec<usize>> = (0..m)
            .map(|_| {
                let mut labs: Vec<usize> = (0..l)
                    .filter(|_| rng.random_range(0.0..1.0) < 0.25)
                    .collect();
                labs.sort_unstable();
                labs
            })
            .collect();
        let prev = LabelCentroids::empty(l, 5);
        let got = refresh_centroids(&q, &gt, &prev).unwrap();
        for lab in 0..l {
            let users: Vec<usize> = (0..m)
                .filter(|&i| gt[i].binary_search(&lab).is_ok())
                .collect();
            if users.is_empty() {
                assert!(!got.valid[lab]);
                continue;
            }
            let mut mean = vec![0.0; 5];
            for &u in &users {
                axpy(&mut mean, 1.0 / users.len() as f64, q.row(u));
            }
            normalize(&mut mean);
            for (a, b) in got.centroids.row(lab).iter().zip(&mean) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }
}
