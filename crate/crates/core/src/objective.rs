//! Triplet hinge objective over batch embeddings.
//!
//! For each query `i`, every (positive `j`, negative `k`) pair drawn from
//! the shared candidate pool contributes `max(0, q_i.n_k - q_i.p_j + margin)`.
//! The hinge kink uses the zero subgradient, so a fully satisfied batch has
//! exactly zero loss and zero gradient. Index lists are iterated in
//! ascending canonical order internally, which makes the result bit-exact
//! under any permutation of the supplied lists.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Mat, axpy, dot};

pub const DEFAULT_MARGIN: f64 = 0.3;

/// How the summed hinge terms are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Plain sum over all triplets.
    #[default]
    Sum,
    /// Sum divided by the total number of triplet terms (active or not);
    /// useful for keeping learning rates comparable across batch shapes.
    Mean,
}

impl Reduction {
    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            _ => Err(Error::Config(format!("unknown reduction {s:?}"))),
        }
    }
}

/// One training step's embeddings plus the index structure tying them
/// together. Fields are public so tests can perturb entries directly;
/// [`TripletBatch::new`] performs full validation.
#[derive(Clone, Debug)]
pub struct TripletBatch {
    /// `B x d`, unit rows.
    pub query_embs: Mat,
    /// `K x d` candidate pool, unit rows.
    pub label_embs: Mat,
    /// Per query: pool indices of its positives (`P_i`), sorted ascending.
    pub positives: Vec<Vec<usize>>,
    /// Per query: pool indices of its mined negatives (`N_i`), sorted
    /// ascending and disjoint from the positives.
    pub negatives: Vec<Vec<usize>>,
    pub margin: f64,
}

const UNIT_TOL: f64 = 1e-6;

impl TripletBatch {
    pub fn new(
        query_embs: Mat,
        label_embs: Mat,
        positives: Vec<Vec<usize>>,
        negatives: Vec<Vec<usize>>,
        margin: f64,
    ) -> Result<Self> {
        let b = query_embs.rows();
        let k = label_embs.rows();
        if query_embs.cols() != label_embs.cols() {
            return Err(Error::Data(format!(
                "query dim {} != pool dim {}",
                query_embs.cols(),
                label_embs.cols()
            )));
        }
        if positives.len() != b || negatives.len() != b {
            return Err(Error::Data(format!(
                "index lists cover {} / {} queries, batch has {b}",
                positives.len(),
                negatives.len()
            )));
        }
        if !(margin >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {margin}")));
        }
        query_embs.check_unit_rows(UNIT_TOL, "query embeddings")?;
        label_embs.check_unit_rows(UNIT_TOL, "pool embeddings")?;

        let mut positives = positives;
        let mut negatives = negatives;
        for i in 0..b {
            positives[i].sort_unstable();
            negatives[i].sort_unstable();
            for &j in positives[i].iter().chain(&negatives[i]) {
                if j >= k {
                    return Err(Error::Data(format!(
                        "query {i}: pool index {j} out of range (pool size {k})"
                    )));
                }
            }
            // Both lists are sorted, so shared elements can be found by a
            // single merge scan.
            let (mut a, mut z) = (0, 0);
            while a < positives[i].len() && z < negatives[i].len() {
                match positives[i][a].cmp(&negatives[i][z]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => z += 1,
                    std::cmp::Ordering::Equal => {
                        return Err(Error::Data(format!(
                            "query {i}: index {} is both positive and negative",
                            positives[i][a]
                        )));
                    }
                }
            }
        }
        Ok(TripletBatch {
            query_embs,
            label_embs,
            positives,
            negatives,
            margin,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.query_embs.rows()
    }

    /// Total number of hinge terms, `sum_i |P_i| * |N_i|`.
    pub fn num_triplets(&self) -> usize {
        self.positives
            .iter()
            .zip(&self.negatives)
            .map(|(p, n)| p.len() * n.len())
            .sum()
    }
}

/// Loss value plus how many hinge terms were strictly active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossStats {
    pub loss: f64,
    pub active: usize,
    pub total: usize,
}

impl LossStats {
    /// Fraction of triplets with a strictly positive hinge.
    pub fn active_frac(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.active as f64 / self.total as f64
        }
    }
}

fn mean_scale(b: &TripletBatch, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => {
            let t = b.num_triplets();
            if t == 0 { 1.0 } else { 1.0 / t as f64 }
        }
    }
}

/// Evaluate the hinge loss. Summation runs query by query, positives then
/// negatives in ascending index order, accumulated left to right.
pub fn triplet_loss(b: &TripletBatch, reduction: Reduction) -> LossStats {
    let mut loss = 0.0;
    let mut active = 0;
    for i in 0..b.batch_size() {
        let q = b.query_embs.row(i);
        for &j in &b.positives[i] {
            let qp = dot(q, b.label_embs.row(j));
            for &k in &b.negatives[i] {
                let hinge = dot(q, b.label_embs.row(k)) - qp + b.margin;
                if hinge > 0.0 {
                    loss += hinge;
                    active += 1;
                }
            }
        }
    }
    LossStats {
        loss: loss * mean_scale(b, reduction),
        active,
        total: b.num_triplets(),
    }
}

/// Queries are processed in fixed-size chunks whose pool-gradient parts
/// are merged in chunk order for bit-determinism across thread counts.
const GRAD_CHUNK: usize = 16;

/// Gradient of [`triplet_loss`] with respect to the query rows and the
/// pool rows. Each strictly active triplet contributes `n - p` to its
/// query row, `+q` to the negative row, and `-q` to the positive row.
pub fn triplet_grad(b: &TripletBatch, reduction: Reduction) -> (Mat, Mat) {
    let d = b.query_embs.cols();
    let nq = b.batch_size();
    let num_chunks = nq.div_ceil(GRAD_CHUNK);
    let parts: Vec<(usize, Mat, Mat)> = (0..num_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * GRAD_CHUNK;
            let hi = (lo + GRAD_CHUNK).min(nq);
            let mut dq = Mat::zeros(hi - lo, d);
            let mut dl = Mat::zeros(b.label_embs.rows(), d);
            for i in lo..hi {
                let q = b.query_embs.row(i);
                for &j in &b.positives[i] {
                    let qp = dot(q, b.label_embs.row(j));
                    for &k in &b.negatives[i] {
                        let hinge = dot(q, b.label_embs.row(k)) - qp + b.margin;
                        if hinge > 0.0 {
                            axpy(dq.row_mut(i - lo), 1.0, b.label_embs.row(k));
                            axpy(dq.row_mut(i - lo), -1.0, b.label_embs.row(j));
                            axpy(dl.row_mut(k), 1.0, q);
                            axpy(dl.row_mut(j), -1.0, q);
                        }
                    }
                }
            }
            (lo, dq, dl)
        })
        .collect();

    let mut dquery = Mat::zeros(nq, d);
    let mut dlabel = Mat::zeros(b.label_embs.rows(), d);
    for (lo, dq, dl) in &parts {
        for r in 0..dq.rows() {
            dquery.row_mut(lo + r).copy_from_slice(dq.row(r));
        }
        dlabel.add_scaled(dl, 1.0);
    }
    let s = mean_scale(b, reduction);
    if s != 1.0 {
        dquery.scale(s);
        dlabel.scale(s);
    }
    (dquery, dlabel)
}
