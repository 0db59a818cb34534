//! Ranking metrics for multi-label prediction: P@k, R@k, and
//! propensity-scored precision PSP@k.
//!
//! Conventions follow the public XMC benchmark tooling: P@k averages over
//! every query (empty-positive queries score zero), R@k averages only over
//! queries that have positives, and PSP@k divides the summed inverse-
//! propensity gain of the predictions by that of the best possible top-k.

use crate::error::{Error, Result};
use crate::retrieval::PredictionSet;

/// Inverse-sigmoid propensity per label: frequent labels approach 1,
/// rare labels shrink toward 0.
#[derive(Clone, Debug)]
pub struct PropensityModel {
    pub propensities: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub n_train: usize,
}

pub const DEFAULT_PSP_A: f64 = 0.55;
pub const DEFAULT_PSP_B: f64 = 1.5;

/// Count how many training queries carry each label.
pub fn label_frequencies(gt: &[Vec<usize>], num_labels: usize) -> Result<Vec<usize>> {
    let mut freq = vec![0usize; num_labels];
    for (q, labels) in gt.iter().enumerate() {
        for &l in labels {
            if l >= num_labels {
                return Err(Error::Data(format!(
                    "query {q}: label {l} out of range (L={num_labels})"
                )));
            }
            freq[l] += 1;
        }
    }
    Ok(freq)
}

/// `p_l = 1 / (1 + C (N_l + B)^-A)` with `C = (ln N - 1)(B + 1)^A`,
/// where `N_l` is the label's training frequency and `N` the number of
/// training queries.
pub fn compute_propensities(
    label_freqs: &[usize],
    n_train: usize,
    a: f64,
    b: f64,
) -> Result<PropensityModel> {
    if !(a > 0.0) {
        return Err(Error::Config(format!("propensity A must be > 0, got {a}")));
    }
    if !(b >= 0.0) {
        return Err(Error::Config(format!("propensity B must be >= 0, got {b}")));
    }
    if n_train < 3 {
        return Err(Error::Data(format!(
            "propensities need at least 3 training queries (ln N - 1 must be positive), got {n_train}"
        )));
    }
    let c = ((n_train as f64).ln() - 1.0) * (b + 1.0).powf(a);
    let propensities = label_freqs
        .iter()
        .map(|&n_l| 1.0 / (1.0 + c * (-a * (n_l as f64 + b).ln()).exp()))
        .collect();
    Ok(PropensityModel {
        propensities,
        a,
        b,
        n_train,
    })
}

fn check_inputs(
    preds: &PredictionSet,
    gt: &[Vec<usize>],
    k: usize,
    num_labels: usize,
) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("metric k must be >= 1".into()));
    }
    if preds.num_queries() != gt.len() {
        return Err(Error::Data(format!(
            "{} prediction rows vs {} ground-truth rows",
            preds.num_queries(),
            gt.len()
        )));
    }
    let need = k.min(num_labels);
    for (i, row) in preds.rows.iter().enumerate() {
        if row.len() < need {
            return Err(Error::Data(format!(
                "query {i}: prediction depth {} is below k={k} (bank holds {num_labels} labels)",
                row.len()
            )));
        }
    }
    Ok(())
}

fn hits(row: &[(usize, f64)], positives: &[usize], k: usize) -> usize {
    row.iter()
        .take(k)
        .filter(|(id, _)| positives.binary_search(id).is_ok())
        .count()
}

/// Mean over all queries of `|top-k ∩ positives| / k`; queries without
/// positives contribute zero.
pub fn precision_at_k(
    preds: &PredictionSet,
    gt: &[Vec<usize>],
    k: usize,
    num_labels: usize,
) -> Result<f64> {
    check_inputs(preds, gt, k, num_labels)?;
    if gt.is_empty() {
        return Err(Error::Data(
            "cannot evaluate precision on zero queries".into(),
        ));
    }
    let mut total = 0.0;
    for (row, positives) in preds.rows.iter().zip(gt) {
        total += hits(row, positives, k) as f64 / k as f64;
    }
    Ok(total / gt.len() as f64)
}

/// Mean over queries *with* positives of `|top-k ∩ positives| / |positives|`.
pub fn recall_at_k(
    preds: &PredictionSet,
    gt: &[Vec<usize>],
    k: usize,
    num_labels: usize,
) -> Result<f64> {
    check_inputs(preds, gt, k, num_labels)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for (row, positives) in preds.rows.iter().zip(gt) {
        if positives.is_empty() {
            continue;
        }
        total += hits(row, positives, k) as f64 / positives.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Data(
            "recall undefined: no query has positive labels".into(),
        ));
    }
    Ok(total / counted as f64)
}

/// Propensity-scored precision: summed `1/p_l` over predicted hits in the
/// top-k, normalized by the same sum for the best achievable top-k (each
/// query's positives taken in ascending-propensity order).
pub fn psp_at_k(
    preds: &PredictionSet,
    gt: &[Vec<usize>],
    pm: &PropensityModel,
    k: usize,
) -> Result<f64> {
    let num_labels = pm.propensities.len();
    check_inputs(preds, gt, k, num_labels)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (row, positives) in preds.rows.iter().zip(gt) {
        for (id, _) in row.iter().take(k) {
            if positives.binary_search(id).is_ok() {
                num += 1.0 / pm.propensities[*id];
            }
        }
        let mut ideal: Vec<f64> = positives.iter().map(|&l| pm.propensities[l]).collect();
        ideal.sort_by(f64::total_cmp);
        for p in ideal.iter().take(k) {
            den += 1.0 / p;
        }
    }
    if den == 0.0 {
        return Err(Error::Data(
            "PSP undefined: no query has positive labels".into(),
        ));
    }
    Ok(num / den)
}

/// Render a fixed-size SVG bar chart of named metric values in `[0, 1]`.
pub fn render_metric_svg(entries: &[(String, f64)]) -> String {
    let bar_w = 64.0;
    let gap = 24.0;
    let chart_h = 220.0;
    let base_y = 250.0;
    let width = 40.0 + entries.len() as f64 * (bar_w + gap) + gap;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0}\" height=\"300\" \
         viewBox=\"0 0 {:.0} 300\">\n",
        width, width
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = base_y - v * chart_h;
        s.push_str(&format!(
            "<line x1=\"36\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
            width - gap
        ));
        s.push_str(&format!(
            "<text x=\"32\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\" \
             font-family=\"sans-serif\">{v:.2}</text>\n",
            y + 4.0
        ));
    }
    for (i, (name, value)) in entries.iter().enumerate() {
        let v = value.clamp(0.0, 1.0);
        let x = 40.0 + i as f64 * (bar_w + gap) + gap;
        let h = v * chart_h;
        s.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar_w:.0}\" height=\"{h:.1}\" \
             fill=\"#4878a8\"/>\n",
            base_y - h
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">{value:.4}</text>\n",
            x + bar_w / 2.0,
            base_y - h - 6.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"270\" font-size=\"12\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">{name}</text>\n",
            x + bar_w / 2.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    use super::*;
    use crate::util::seeded_rng;

    fn preds(rows: Vec<Vec<(usize, f64)>>) -> PredictionSet {
        PredictionSet { rows }
    }

    #[test]
    fn single_correct_top1_is_perfect_precision() {
        let p = preds(vec![vec![(2, 0.9), (0, 0.1)]]);
        let gt = vec![vec![2]];
        assert_eq!(precision_at_k(&p, &gt, 1, 5).unwrap(), 1.0);
    }

    #[test]
    fn precision_averages_hits_over_all_queries() {
        let p = preds(vec![vec![(1, 0.9)], vec![(1, 0.9)]]);
        let gt = vec![vec![1], vec![0]];
        assert_eq!(precision_at_k(&p, &gt, 1, 3).unwrap(), 0.5);
    }

    #[test]
    fn empty_positive_queries_count_against_precision_but_not_recall() {
        let p = preds(vec![vec![(1, 0.9)], vec![(0, 0.8)]]);
        let gt = vec![vec![1], vec![]];
        assert_eq!(precision_at_k(&p, &gt, 1, 3).unwrap(), 0.5);
        assert_eq!(recall_at_k(&p, &gt, 1, 3).unwrap(), 1.0);
    }

    #[test]
    fn recall_requires_at_least_one_positive_query() {
        let p = preds(vec![vec![(1, 0.9)]]);
        let gt = vec![vec![]];
        assert!(recall_at_k(&p, &gt, 1, 3).is_err());
    }

    #[test]
    fn full_retrieval_is_perfect_recall() {
        let p = preds(vec![vec![(0, 0.9), (2, 0.8), (4, 0.7)]]);
        let gt = vec![vec![0, 2]];
        assert_eq!(recall_at_k(&p, &gt, 3, 5).unwrap(), 1.0);
    }

    #[test]
    fn shallow_prediction_rows_are_rejected() {
        let p = preds(vec![vec![(1, 0.9)]]);
        let gt = vec![vec![1]];
        assert!(precision_at_k(&p, &gt, 2, 5).is_err(), "depth 1 < k=2");
        // But k larger than the whole label space is fine: top-k is the bank.
        assert!(precision_at_k(&p, &gt, 2, 1).is_ok());
        assert!(precision_at_k(&p, &gt, 0, 5).is_err(), "k = 0");
    }

    #[test]
    fn metrics_match_brute_force_on_random_fixtures() {
        let mut rng = seeded_rng(5);
        for round in 0..10 {
            let nq = 20;
            let nl = 15;
            let k = 1 + round % 5;
            let gt: Vec<Vec<usize>> = (0..nq)
                .map(|_| {
                    let mut v: Vec<usize> = (0..nl)
                        .filter(|_| rng.random_range(0.0..1.0) < 0.3)
                        .collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            let p = preds(
                (0..nq)
                    .map(|_| {
                        let mut ids: Vec<usize> = (0..nl).collect();
                        for i in (1..ids.len()).rev() {
                            ids.swap(i, rng.random_range(0..=i));
                        }
                        ids.iter()
                            .enumerate()
                            .map(|(rank, &id)| (id, 1.0 - rank as f64 / nl as f64))
                            .collect()
                    })
                    .collect(),
            );

            // Brute-force oracles via explicit set intersection.
            let inter = |row: &[(usize, f64)], pos: &[usize], k: usize| -> usize {
                row.iter()
                    .take(k)
                    .filter(|(id, _)| pos.iter().any(|p| p == id))
                    .count()
            };
            let mut p_sum = 0.0;
            let mut r_sum = 0.0;
            let mut r_n = 0;
            for i in 0..nq {
                let h = inter(&p.rows[i], &gt[i], k);
                p_sum += h as f64 / k as f64;
                if !gt[i].is_empty() {
                    r_sum += h as f64 / gt[i].len() as f64;
                    r_n += 1;
                }
            }
            assert_abs_diff_eq!(
                precision_at_k(&p, &gt, k, nl).unwrap(),
                p_sum / nq as f64,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                recall_at_k(&p, &gt, k, nl).unwrap(),
                r_sum / r_n as f64,
                epsilon = 1e-12
            );

            let freqs = label_frequencies(&gt, nl).unwrap();
            let pm = compute_propensities(&freqs, 10_000, 0.55, 1.5).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..nq {
                for (id, _) in p.rows[i].iter().take(k) {
                    if gt[i].contains(id) {
                        num += 1.0 / pm.propensities[*id];
                    }
                }
                let mut inv: Vec<f64> = gt[i].iter().map(|&l| 1.0 / pm.propensities[l]).collect();
                inv.sort_by(|a, b| b.total_cmp(a));
                den += inv.iter().take(k).sum::<f64>();
            }
            assert_abs_diff_eq!(
                psp_at_k(&p, &gt, &pm, k).unwrap(),
                num / den,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn total_hits_never_decrease_with_k() {
        let mut rng = seeded_rng(8);
        let nl = 12;
        let gt: Vec<Vec<usize>> = (0..15)
            .map(|_| {
                let mut v: Vec<usize> = (0..nl)
                    .filter(|_| rng.random_range(0.0..1.0) < 0.4)
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        let p = preds(
            (0..15)
                .map(|_| {
                    let mut ids: Vec<usize> = (0..nl).collect();
                    for i in (1..ids.len()).rev() {
                        ids.swap(i, rng.random_range(0..=i));
                    }
                    ids.iter()
                        .enumerate()
                        .map(|(rank, &id)| (id, 1.0 - rank as f64 / nl as f64))
                        .collect()
                })
                .collect(),
        );
        let mut prev = 0.0;
        for k in 1..=nl {
            let total_hits = precision_at_k(&p, &gt, k, nl).unwrap() * k as f64;
            assert!(total_hits >= prev - 1e-12, "k={k}");
            prev = total_hits;
        }
    }

    #[test]
    fn propensity_formula_matches_frozen_high_precision_value() {
        // 1 / (1 + (ln 1e4 - 1) * 2.5^0.55 * 11.5^-0.55), evaluated
        // independently at 40-digit precision.
        let pm = compute_propensities(&[10], 10_000, 0.55, 1.5).unwrap();
        assert_abs_diff_eq!(pm.propensities[0], 0.2199318754125524, epsilon = 1e-15);
    }

    #[test]
    fn propensities_are_monotone_and_bounded() {
        let freqs: Vec<usize> = vec![0, 1, 2, 5, 10, 100, 10_000];
        let pm = compute_propensities(&freqs, 50_000, 0.55, 1.5).unwrap();
        for w in pm.propensities.windows(2) {
            assert!(w[0] <= w[1], "monotone in frequency");
        }
        for &p in &pm.propensities {
            assert!(p > 0.0 && p <= 1.0);
        }
        // Equal frequencies → equal propensities.
        let eq = compute_propensities(&[7, 7, 7], 1000, 0.55, 1.5).unwrap();
        assert_eq!(eq.propensities[0], eq.propensities[1]);
        assert_eq!(eq.propensities[1], eq.propensities[2]);
    }

    #[test]
    fn propensity_parameter_validation() {
        assert!(
            compute_propensities(&[1], 2, 0.55, 1.5).is_err(),
            "N too small"
        );
        assert!(compute_propensities(&[1], 100, 0.0, 1.5).is_err(), "A = 0");
        assert!(
            compute_propensities(&[1], 100, 0.55, -0.5).is_err(),
            "negative B"
        );
    }

    #[test]
    fn uniform_propensities_reduce_psp_to_hit_ratio_and_perfect_preds_to_one() {
        let gt = vec![vec![0, 1], vec![2]];
        let pm = compute_propensities(&[5, 5, 5], 1000, 0.55, 1.5).unwrap();
        // Perfect predictions: every query's positives first.
        let perfect = preds(vec![
            vec![(0, 0.9), (1, 0.8), (2, 0.1)],
            vec![(2, 0.9), (0, 0.2), (1, 0.1)],
        ]);
        assert_abs_diff_eq!(
            psp_at_k(&perfect, &gt, &pm, 2).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // With constant p the ratio is total hits over total ideal hits.
        let miss = preds(vec![
            vec![(2, 0.9), (1, 0.8), (0, 0.1)],
            vec![(0, 0.9), (1, 0.2), (2, 0.1)],
        ]);
        // hits@2: query 0 has one (label 1), query 1 zero; ideal: 2 + 1.
        assert_abs_diff_eq!(
            psp_at_k(&miss, &gt, &pm, 2).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn svg_chart_contains_one_bar_per_metric() {
        let svg = render_metric_svg(&[
            ("P@1".to_string(), 0.91),
            ("R@10".to_string(), 0.97),
            ("PSP@1".to_string(), 0.55),
        ]);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        // One background rect plus one bar per metric.
        assert_eq!(svg.matches("<rect ").count(), 3 + 1);
        for name in ["P@1", "R@10", "PSP@1", "0.9100", "0.9700", "0.5500"] {
            assert!(svg.contains(name), "missing {name}");
        }
    }
}
