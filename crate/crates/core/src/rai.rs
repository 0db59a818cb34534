//! Retrieval-augmented inference.
//!
//! Two searches run per test query: one over the label bank and one over
//! the training-query bank. The weighted results (λ for labels, 1−λ for
//! train queries) are merged, softmax-normalized at a shared temperature,
//! and each retrieved training query is expanded into its positive labels,
//! every label inheriting that entry's mass. Per-label masses are combined
//! (sum or max) and the top `output_k` labels come back ranked.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::retrieval::{EmbeddingIndex, PredictionSet};

/// How masses landing on the same label combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Max,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Max => "max",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "max" => Ok(Aggregation::Max),
            _ => Err(Error::Config(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RaiConfig {
    /// Weight of the direct label search; `1 - lambda` goes to the
    /// training-query search.
    pub lambda: f64,
    /// Softmax temperature over the merged candidate list.
    pub temperature: f64,
    /// Depth of each of the two searches.
    pub k_search: usize,
    pub aggregation: Aggregation,
    /// Number of labels emitted per query.
    pub output_k: usize,
}

impl Default for RaiConfig {
    fn default() -> Self {
        RaiConfig {
            lambda: 0.9,
            temperature: 0.05,
            k_search: 100,
            aggregation: Aggregation::Sum,
            output_k: 10,
        }
    }
}

impl RaiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda must be in [0,1], got {}",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.k_search == 0 || self.output_k == 0 {
            return Err(Error::Config(
                "k_search and output_k must be positive".into(),
            ));
        }
        Ok(())
    }
}

static EMPTY_GT_WARNED: AtomicBool = AtomicBool::new(false);

/// Augmented prediction for a single unit-norm query embedding.
///
/// `train_gt[i]` must list the positive labels of the train query whose id
/// is `i` in `trainq_index`. A retrieved train query with no positives
/// contributes nothing (warned once per process).
pub fn rai_predict(
    q_emb: &[f64],
    label_index: &EmbeddingIndex,
    trainq_index: &EmbeddingIndex,
    train_gt: &[Vec<usize>],
    cfg: &RaiConfig,
) -> Result<Vec<(usize, f64)>> {
    cfg.validate()?;
    if label_index.is_empty() || trainq_index.is_empty() {
        return Err(Error::Data(
            "augmented inference needs non-empty label and train-query banks".into(),
        ));
    }

    // At the endpoints one side's weight is exactly zero; its entries are
    // dropped entirely so lambda = 1 reproduces the base label ranking and
    // lambda = 0 is pure train-query expansion. In between, both searches
    // merge into one weighted candidate list: labels first, then train
    // queries, mirroring a single unified search.
    let labels = if cfg.lambda > 0.0 {
        label_index.search_topk(q_emb, cfg.k_search)?
    } else {
        Vec::new()
    };
    let trains = if cfg.lambda < 1.0 {
        trainq_index.search_topk(q_emb, cfg.k_search)?
    } else {
        Vec::new()
    };

    enum Origin {
        Label(usize),
        Train(usize),
    }
    let mut origins = Vec::with_capacity(labels.len() + trains.len());
    let mut weighted = Vec::with_capacity(labels.len() + trains.len());
    for (id, s) in &labels {
        origins.push(Origin::Label(*id));
        weighted.push(cfg.lambda * s);
    }
    for (id, s) in &trains {
        origins.push(Origin::Train(*id));
        weighted.push((1.0 - cfg.lambda) * s);
    }

    let max = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut masses: Vec<f64> = weighted
        .iter()
        .map(|w| ((w - max) / cfg.temperature).exp())
        .collect();
    let z: f64 = masses.iter().sum();
    for m in &mut masses {
        *m /= z;
    }

    let mut per_label: BTreeMap<usize, f64> = BTreeMap::new();
    let mut add = |label: usize, mass: f64| {
        let slot = per_label.entry(label).or_insert(0.0);
        match cfg.aggregation {
            Aggregation::Sum => *slot += mass,
            Aggregation::Max => *slot = slot.max(mass),
        }
    };
    for (origin, mass) in origins.iter().zip(&masses) {
        match origin {
            Origin::Label(l) => add(*l, *mass),
            Origin::Train(t) => {
                let positives = train_gt.get(*t).ok_or_else(|| {
                    Error::Data(format!("train query {t} has no ground-truth row"))
                })?;
                if positives.is_empty() && !EMPTY_GT_WARNED.swap(true, Ordering::Relaxed) {
                    eprintln!(
                        "warning: retrieved train query {t} has no positive labels; \
                         it contributes nothing to augmented inference"
                    );
                }
                for &l in positives {
                    add(l, *mass);
                }
            }
        }
    }

    let mut ranked: Vec<(usize, f64)> = per_label.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cfg.output_k);
    Ok(ranked)
}

/// [`rai_predict`] for each row of `queries`, in parallel, output row `i`
/// for query row `i`.
pub fn rai_predict_all(
    queries: &Mat,
    label_index: &EmbeddingIndex,
    trainq_index: &EmbeddingIndex,
    train_gt: &[Vec<usize>],
    cfg: &RaiConfig,
) -> Result<PredictionSet> {
    cfg.validate()?;
    let rows = (0..queries.rows())
        .into_par_iter()
        .map(|i| rai_predict(queries.row(i), label_index, trainq_index, train_gt, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionSet { rows })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::linalg::normalize;
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

    fn fixture(
        seed: u64,
        n_labels: usize,
        n_train: usize,
        d: usize,
    ) -> (EmbeddingIndex, EmbeddingIndex, Vec<Vec<usize>>) {
        let mut rng = seeded_rng(seed + 500);
        let labels = EmbeddingIndex::build_dense(unit_rows(n_labels, d, seed), 64).unwrap();
        let trains = EmbeddingIndex::build_dense(unit_rows(n_train, d, seed + 1), 64).unwrap();
        let gt: Vec<Vec<usize>> = (0..n_train)
            .map(|_| {
                let mut v: Vec<usize> = (0..n_labels)
                    .filter(|_| rng.random_range(0.0..1.0) < 0.3)
                    .collect();
                v.sort_unstable();
                if v.is_empty() {
                    v.push(rng.random_range(0..n_labels));
                }
                v
            })
            .collect();
        (labels, trains, gt)
    }

    #[test]
    fn lambda_one_keeps_the_base_label_ranking() {
        let (labels, trains, gt) = fixture(1, 20, 10, 6);
        let q = unit_rows(1, 6, 9);
        let cfg = RaiConfig {
            lambda: 1.0,
            output_k: 8,
            k_search: 20,
            ..RaiConfig::default()
        };
        let got = rai_predict(q.row(0), &labels, &trains, &gt, &cfg).unwrap();
        let base = labels.search_topk(q.row(0), 8).unwrap();
        let got_ids: Vec<usize> = got.iter().map(|p| p.0).collect();
        let base_ids: Vec<usize> = base.iter().map(|p| p.0).collect();
        assert_eq!(got_ids, base_ids, "softmax is monotone, order must survive");
    }

    #[test]
    fn lambda_zero_single_train_query_expands_to_its_positives() {
        // Label 0 is aligned with the query so the (down-weighted) label
        // search retrieves it and stays clear of the expanded ids {3, 7}.
        let mut label_rows = vec![vec![1.0, 0.0, 0.0, 0.0]];
        for r in 1..10 {
            let mut v = vec![-1.0, (r % 3) as f64, (r % 2) as f64, 1.0];
            normalize(&mut v);
            label_rows.push(v);
        }
        let labels = EmbeddingIndex::build_dense(Mat::from_rows(&label_rows), 16).unwrap();
        let trains =
            EmbeddingIndex::build_dense(Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]), 16).unwrap();
        let gt = vec![vec![3, 7]];
        let cfg = RaiConfig {
            lambda: 0.0,
            output_k: 5,
            k_search: 1,
            ..RaiConfig::default()
        };
        let q = [1.0, 0.0, 0.0, 0.0];
        let got = rai_predict(&q, &labels, &trains, &gt, &cfg).unwrap();
        // The label search is dropped at lambda = 0, so the output is
        // exactly the expansion of the one retrieved train query: {3, 7}
        // with equal scores, ordered by id.
        assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), vec![3, 7]);
        assert_abs_diff_eq!(got[0].1, got[1].1, epsilon = 1e-15);
        assert_abs_diff_eq!(got[0].1 + got[1].1, 2.0, epsilon = 1e-12);
    }

    /// Straight-line oracle: recompute the five steps with plain code.
    fn oracle(
        q: &[f64],
        labels: &EmbeddingIndex,
        trains: &EmbeddingIndex,
        gt: &[Vec<usize>],
        cfg: &RaiConfig,
    ) -> Vec<(usize, f64)> {
        let ls = labels.search_topk(q, cfg.k_search).unwrap();
        let ts = trains.search_topk(q, cfg.k_search).unwrap();
        let mut entries: Vec<(Option<usize>, usize, f64)> = Vec::new();
        for (id, s) in &ls {
            entries.push((None, *id, cfg.lambda * s));
        }
        for (id, s) in &ts {
            entries.push((Some(*id), 0, (1.0 - cfg.lambda) * s));
        }
        let max = entries
            .iter()
            .map(|e| e.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = entries
            .iter()
            .map(|e| ((e.2 - max) / cfg.temperature).exp())
            .collect();
        let total: f64 = exps.iter().sum();
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for (e, m) in entries.iter().zip(&exps) {
            let mass = m / total;
            let targets: Vec<usize> = match e.0 {
                None => vec![e.1],
                Some(t) => gt[t].clone(),
            };
            for l in targets {
                match cfg.aggregation {
                    Aggregation::Sum => *acc.entry(l).or_insert(0.0) += mass,
                    Aggregation::Max => {
                        let v = acc.entry(l).or_insert(0.0);
                        *v = v.max(mass);
                    }
                }
            }
        }
        let mut out: Vec<(usize, f64)> = acc.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(cfg.output_k);
        out
    }

    #[test]
    fn hand_fixture_matches_straight_line_oracle() {
        for agg in [Aggregation::Sum, Aggregation::Max] {
            let (labels, trains, gt) = fixture(11, 5, 4, 4);
            let cfg = RaiConfig {
                lambda: 0.9,
                temperature: 0.05,
                k_search: 4,
                aggregation: agg,
                output_k: 5,
            };
            let queries = unit_rows(6, 4, 40);
            for i in 0..queries.rows() {
                let got = rai_predict(queries.row(i), &labels, &trains, &gt, &cfg).unwrap();
                let want = oracle(queries.row(i), &labels, &trains, &gt, &cfg);
                assert_eq!(got.len(), want.len());
                for (g, w) in got.iter().zip(&want) {
                    assert_eq!(g.0, w.0);
                    assert_abs_diff_eq!(g.1, w.1, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn merged_masses_sum_to_one_and_scores_stay_nonnegative() {
        let (labels, trains, gt) = fixture(21, 30, 25, 5);
        let cfg = RaiConfig {
            output_k: 1000,
            k_search: 10,
            ..RaiConfig::default()
        };
        let q = unit_rows(1, 5, 99);
        let got = rai_predict(q.row(0), &labels, &trains, &gt, &cfg).unwrap();
        assert!(got.iter().all(|p| p.1 >= 0.0));
        // With sum aggregation and unlimited output, total mass is the
        // softmax total (1) plus duplication from multi-label expansion;
        // recompute the exact expected total for this fixture.
        let trains_hit = trains.search_topk(q.row(0), 10).unwrap();
        let labels_hit = labels.search_topk(q.row(0), 10).unwrap();
        let mut weighted: Vec<f64> = labels_hit.iter().map(|p| 0.9 * p.1).collect();
        weighted.extend(trains_hit.iter().map(|p| 0.1 * p.1));
        let max = weighted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = weighted.iter().map(|w| ((w - max) / 0.05).exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut expect = 0.0;
        for (i, e) in exps.iter().enumerate() {
            let copies = if i < labels_hit.len() {
                1
            } else {
                gt[trains_hit[i - labels_hit.len()].0].len()
            };
            expect += copies as f64 * e / z;
        }
        let total: f64 = got.iter().map(|p| p.1).sum();
        assert_abs_diff_eq!(total, expect, epsilon = 1e-9);
    }

    #[test]
    fn batched_augmentation_matches_single_calls_in_order() {
        let (labels, trains, gt) = fixture(31, 15, 12, 4);
        let cfg = RaiConfig {
            k_search: 6,
            output_k: 4,
            ..RaiConfig::default()
        };
        let queries = unit_rows(7, 4, 60);
        let batch = rai_predict_all(&queries, &labels, &trains, &gt, &cfg).unwrap();
        for i in 0..queries.rows() {
            assert_eq!(
                batch.rows[i],
                rai_predict(queries.row(i), &labels, &trains, &gt, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn configs_are_validated() {
        let bad = [
            RaiConfig {
                lambda: 1.2,
                ..RaiConfig::default()
            },
            RaiConfig {
                lambda: -0.1,
                ..RaiConfig::default()
            },
            RaiConfig {
                temperature: 0.0,
                ..RaiConfig::default()
            },
            RaiConfig {
                k_search: 0,
                ..RaiConfig::default()
            },
            RaiConfig {
                output_k: 0,
                ..RaiConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert!(RaiConfig::default().validate().is_ok());
    }

    #[test]
    fn missing_gt_row_is_an_error_but_empty_gt_only_warns() {
        let labels = EmbeddingIndex::build_dense(unit_rows(4, 3, 7), 8).unwrap();
        let trains = EmbeddingIndex::build_dense(unit_rows(2, 3, 8), 8).unwrap();
        let cfg = RaiConfig {
            k_search: 2,
            output_k: 3,
            ..RaiConfig::default()
        };
        let q = unit_rows(1, 3, 9);
        // gt shorter than the train bank → hard error.
        let short: Vec<Vec<usize>> = vec![vec![1]];
        assert!(rai_predict(q.row(0), &labels, &trains, &short, &cfg).is_err());
        // Empty gt row → contributes nothing, still succeeds.
        let empty: Vec<Vec<usize>> = vec![vec![1], vec![]];
        let got = rai_predict(q.row(0), &labels, &trains, &empty, &cfg).unwrap();
        assert!(!got.is_empty());
    }
}
