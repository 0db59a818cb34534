//! Exact maximum-inner-product search over an embedding bank.
//!
//! Prediction is a dense blocked scan with a bounded selection buffer,
//! with no approximation anywhere, so every search equals the exhaustive
//! sort under the (score descending, id ascending) tie rule.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Mat, dot};

pub const DEFAULT_BLOCK_SIZE: usize = 256;

/// An immutable bank of unit-norm rows, scanned block by block.
#[derive(Clone, Debug)]
pub struct EmbeddingIndex {
    embs: Mat,
    ids: Vec<usize>,
    block_size: usize,
}

/// Ranked `(id, score)` rows, one per query, each sorted by
/// (score descending, id ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// `a` ranks before `b` under the canonical tie rule.
fn ranks_before(a: (usize, f64), b: (usize, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

impl EmbeddingIndex {
    /// Wrap unit-norm rows (checked to 1e-6) and their item ids.
    pub fn build(embs: Mat, ids: Vec<usize>, block_size: usize) -> Result<Self> {
        if ids.len() != embs.rows() {
            return Err(Error::Data(format!(
                "{} ids for {} embedding rows",
                ids.len(),
                embs.rows()
            )));
        }
        if block_size == 0 {
            return Err(Error::Config("block_size must be positive".into()));
        }
        embs.check_unit_rows(1e-6, "index embeddings")?;
        Ok(EmbeddingIndex {
            embs,
            ids,
            block_size,
        })
    }

    /// Rows indexed by their own position: id map `row -> row`.
    pub fn build_dense(embs: Mat, block_size: usize) -> Result<Self> {
        let ids = (0..embs.rows()).collect();
        Self::build(embs, ids, block_size)
    }

    pub fn len(&self) -> usize {
        self.embs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embs.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embs.cols()
    }

    /// Exact top-`k` by inner product. Returns `min(k, N)` pairs.
    pub fn search_topk(&self, q: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::Config("search k must be positive".into()));
        }
        if q.len() != self.embs.cols() {
            return Err(Error::Data(format!(
                "query dim {} != index dim {}",
                q.len(),
                self.embs.cols()
            )));
        }
        // Bounded selection buffer: keep the best k seen so far, tracking
        // the current worst. Blocks only shape the scan order; candidates
        // are compared under a total order, so block_size cannot change
        // the result.
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k.min(self.len()) + 1);
        let mut row = 0;
        while row < self.len() {
            let end = (row + self.block_size).min(self.len());
            for r in row..end {
                let cand = (self.ids[r], dot(q, self.embs.row(r)));
                if best.len() < k {
                    let pos = best.partition_point(|&b| ranks_before(b, cand));
                    best.insert(pos, cand);
                } else if ranks_before(cand, *best.last().unwrap()) {
                    let pos = best.partition_point(|&b| ranks_before(b, cand));
                    best.insert(pos, cand);
                    best.pop();
                }
            }
            row = end;
        }
        Ok(best)
    }

    /// [`search_topk`] for every query row, in parallel; output row `i`
    /// belongs to query row `i`.
    pub fn predict_all(&self, queries: &Mat, k: usize) -> Result<PredictionSet> {
        let rows: Vec<Vec<(usize, f64)>> = (0..queries.rows())
            .into_par_iter()
            .map(|i| self.search_topk(queries.row(i), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionSet { rows })
    }
}

impl PredictionSet {
    pub fn num_queries(&self) -> usize {
        self.rows.len()
    }

    /// Write `query_index\tid:score,...` with six-decimal scores.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&i.to_string());
            out.push('\t');
            for (j, (id, score)) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{id}:{score:.6}"));
            }
            out.push('\n');
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        w.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read a file produced by [`PredictionSet::save`]. Query indices must
    /// be dense and ascending from zero.
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let lineno = lineno + 1;
            let (idx, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, lineno, "expected <index>\\t<pairs>"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("bad query index {idx:?}")))?;
            if idx != rows.len() {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("query index {idx} out of order (expected {})", rows.len()),
                ));
            }
            let mut row = Vec::new();
            if !rest.is_empty() {
                for pair in rest.split(',') {
                    let (id, score) = pair.split_once(':').ok_or_else(|| {
                        Error::format(path, lineno, format!("bad id:score pair {pair:?}"))
                    })?;
                    let id: usize = id
                        .parse()
                        .map_err(|_| Error::format(path, lineno, format!("bad label id {id:?}")))?;
                    let score: f64 = score
                        .parse()
                        .map_err(|_| Error::format(path, lineno, format!("bad score {score:?}")))?;
                    row.push((id, score));
                }
            }
            // Scores are serialized at 6 decimals, which can collapse
            // distinct full-precision values onto the same printed score in
            // either id order; only score monotonicity survives the dump.
            for w in row.windows(2) {
                if w[1].1 > w[0].1 {
                    return Err(Error::format(
                        path,
                        lineno,
                        "pair scores are not non-increasing",
                    ));
                }
            }
            let mut seen: Vec<usize> = row.iter().map(|p| p.0).collect();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::format(path, lineno, "duplicate label id in row"));
            }
            rows.push(row);
        }
        Ok(PredictionSet { rows })
    }
}
