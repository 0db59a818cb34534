//! Datasets, image banks, corpus statistics, and the synthetic generator.
//!
//! Text corpora are tab-indexed UTF-8 files; ground truth is a headered
//! list of ascending label indices per query; image vectors live in a
//! binary bank keyed by item index. The synthetic generator plants a
//! cluster structure in which text identifies a cluster (or, for
//! ambiguous queries, only a cluster *pair*) while image vectors always
//! identify the cluster, so multimodal models have measurable headroom.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;

use crate::bytes::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Which role a set of queries plays; train splits must have complete
/// ground truth, test splits may contain queries with no positives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Which side of the retrieval problem an image bank describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BankSide {
    Query,
    Label,
}

impl fmt::Display for BankSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankSide::Query => write!(f, "query"),
            BankSide::Label => write!(f, "label"),
        }
    }
}

/// A query/label corpus with per-query positive label sets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub query_texts: Vec<String>,
    pub label_texts: Vec<String>,
    /// Per query, the strictly ascending indices of its positive labels.
    pub ground_truth: Vec<Vec<usize>>,
    pub split: Split,
}

impl Dataset {
    /// Validate the structural invariants and build a dataset.
    pub fn new(
        query_texts: Vec<String>,
        label_texts: Vec<String>,
        ground_truth: Vec<Vec<usize>>,
        split: Split,
    ) -> Result<Self> {
        if ground_truth.len() != query_texts.len() {
            return Err(Error::Data(format!(
                "ground truth covers {} queries but corpus has {}",
                ground_truth.len(),
                query_texts.len()
            )));
        }
        let num_labels = label_texts.len();
        for (q, row) in ground_truth.iter().enumerate() {
            if split == Split::Train && row.is_empty() {
                return Err(Error::Data(format!(
                    "train query {q} has no positive labels"
                )));
            }
            let mut prev: Option<usize> = None;
            for &l in row {
                if l >= num_labels {
                    return Err(Error::Data(format!(
                        "query {q}: label index {l} out of range (L={num_labels})"
                    )));
                }
                if let Some(p) = prev
                    && l <= p
                {
                    return Err(Error::Data(format!(
                        "query {q}: label indices not strictly ascending at {l}"
                    )));
                }
                prev = Some(l);
            }
        }
        Ok(Dataset {
            query_texts,
            label_texts,
            ground_truth,
            split,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.query_texts.len()
    }

    pub fn num_labels(&self) -> usize {
        self.label_texts.len()
    }
}

/// Frozen image vectors keyed by item index; zero or more per item.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBank {
    pub side: BankSide,
    pub dim: usize,
    entries: BTreeMap<u64, Vec<Vec<f64>>>,
}

impl ImageBank {
    pub fn new(side: BankSide, dim: usize) -> Self {
        ImageBank {
            side,
            dim,
            entries: BTreeMap::new(),
        }
    }

    /// Insert all vectors for one item; replaces any previous entry.
    pub fn insert(&mut self, item: u64, images: Vec<Vec<f64>>) -> Result<()> {
        for (i, v) in images.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::Data(format!(
                    "item {item} image {i}: dim {} != bank dim {}",
                    v.len(),
                    self.dim
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Data(format!(
                    "item {item} image {i}: non-finite value {bad}"
                )));
            }
        }
        self.entries.insert(item, images);
        Ok(())
    }

    /// All image vectors stored for `item` (absent items yield `None`).
    pub fn images(&self, item: u64) -> Option<&[Vec<f64>]> {
        self.entries.get(&item).map(Vec::as_slice)
    }

    pub fn num_items(&self) -> usize {
        self.entries.len()
    }

    /// True when the item exists and carries at least one image.
    pub fn has_images(&self, item: u64) -> bool {
        self.entries.get(&item).is_some_and(|v| !v.is_empty())
    }
}

const BANK_MAGIC: &[u8; 4] = b"VIXB";
pub const BANK_VERSION: u32 = 1;

/// Read an image bank: magic, version, dim, item count, then per item its
/// index, image count, and `count * dim` little-endian `f32` components.
pub fn load_image_bank(path: &Path, side: BankSide) -> Result<ImageBank> {
    let mut r = BinReader::open(path)?;
    r.expect_magic(BANK_MAGIC, "image bank")?;
    let version = r.read_u32()?;
    if version != BANK_VERSION {
        return Err(Error::format(
            path,
            0,
            format!("unsupported bank version {version}"),
        ));
    }
    let dim = r.read_u32()? as usize;
    if dim == 0 {
        return Err(Error::format(path, 0, "image dim must be positive"));
    }
    let count = r.read_u64()?;
    let mut bank = ImageBank::new(side, dim);
    for n in 0..count {
        let item = r.read_u64()?;
        if bank.entries.contains_key(&item) {
            return Err(Error::format(
                path,
                0,
                format!("duplicate item index {item}"),
            ));
        }
        let images = r.read_u16()? as usize;
        let mut vecs = Vec::with_capacity(images);
        for i in 0..images {
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                let x = r.read_f32()?;
                if !x.is_finite() {
                    return Err(Error::format(
                        path,
                        0,
                        format!("record {n} item {item} image {i}: non-finite float"),
                    ));
                }
                v.push(f64::from(x));
            }
            vecs.push(v);
        }
        bank.entries.insert(item, vecs);
    }
    r.expect_eof()?;
    Ok(bank)
}

/// Write a bank in canonical (ascending item index) order.
pub fn save_image_bank(path: &Path, bank: &ImageBank) -> Result<()> {
    let mut w = BinWriter::create(path)?;
    w.write_magic(BANK_MAGIC)?;
    w.write_u32(BANK_VERSION)?;
    w.write_u32(bank.dim as u32)?;
    w.write_u64(bank.entries.len() as u64)?;
    for (&item, images) in &bank.entries {
        w.write_u64(item)?;
        let n = u16::try_from(images.len()).map_err(|_| {
            Error::Data(format!(
                "item {item}: {} images exceed the u16 record limit",
                images.len()
            ))
        })?;
        w.write_u16(n)?;
        for v in images {
            debug_assert_eq!(v.len(), bank.dim);
            for &x in v {
                w.write_f32(x as f32)?;
            }
        }
    }
    w.finish()
}

/// Read an indexed text file: line `i` (1-based) must read `i-1\t<text>`.
pub fn load_texts(path: &Path) -> Result<Vec<String>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut texts = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.ends_with('\r') {
            return Err(Error::format(
                path,
                lineno + 1,
                "CRLF line ending; expected LF",
            ));
        }
        let Some((idx, text)) = line.split_once('\t') else {
            return Err(Error::format(
                path,
                lineno + 1,
                "missing tab between index and text",
            ));
        };
        let parsed: usize = idx
            .parse()
            .map_err(|_| Error::format(path, lineno + 1, format!("bad index field {idx:?}")))?;
        if parsed != lineno {
            return Err(Error::format(
                path,
                lineno + 1,
                format!("index {parsed} out of order; expected {lineno}"),
            ));
        }
        texts.push(text.to_string());
    }
    Ok(texts)
}

/// Write an indexed text file (LF endings, trailing newline).
pub fn save_texts(path: &Path, texts: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        out.push_str(&format!("{i}\t{t}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read a ground-truth file: header `M L`, then `M` comma-separated rows
/// of strictly ascending label indices (a row may be empty).
pub fn load_ground_truth(path: &Path) -> Result<(Vec<Vec<usize>>, usize)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "empty file"))?;
    let mut parts = header.split_whitespace();
    let (m, l) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(l), None) => {
            let m: usize = m
                .parse()
                .map_err(|_| Error::format(path, 1, format!("bad query count {m:?}")))?;
            let l: usize = l
                .parse()
                .map_err(|_| Error::format(path, 1, format!("bad label count {l:?}")))?;
            (m, l)
        }
        _ => return Err(Error::format(path, 1, "header must be `M L`")),
    };
    let mut rows = Vec::with_capacity(m);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.ends_with('\r') {
            return Err(Error::format(path, lineno, "CRLF line ending; expected LF"));
        }
        if i >= m {
            return Err(Error::format(path, lineno, format!("more than {m} rows")));
        }
        let mut row = Vec::new();
        if !line.is_empty() {
            for tok in line.split(',') {
                let v: usize = tok
                    .parse()
                    .map_err(|_| Error::format(path, lineno, format!("bad label index {tok:?}")))?;
                if v >= l {
                    return Err(Error::format(
                        path,
                        lineno,
                        format!("label index {v} out of range (L={l})"),
                    ));
                }
                if let Some(&prev) = row.last() {
                    if v == prev {
                        return Err(Error::format(path, lineno, format!("duplicate index {v}")));
                    }
                    if v < prev {
                        return Err(Error::format(
                            path,
                            lineno,
                            format!("indices not ascending at {v}"),
                        ));
                    }
                }
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.len() != m {
        return Err(Error::format(
            path,
            rows.len() + 1,
            format!("expected {m} rows, found {}", rows.len()),
        ));
    }
    Ok((rows, l))
}

/// Write ground truth in the canonical format read by [`load_ground_truth`].
pub fn save_ground_truth(path: &Path, rows: &[Vec<usize>], num_labels: usize) -> Result<()> {
    let mut out = format!("{} {}\n", rows.len(), num_labels);
    for row in rows {
        let line: Vec<String> = row.iter().map(usize::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a full dataset from its three text files, cross-checking counts.
pub fn load_dataset(
    query_path: &Path,
    label_path: &Path,
    gt_path: &Path,
    split: Split,
) -> Result<Dataset> {
    let query_texts = load_texts(query_path)?;
    let label_texts = load_texts(label_path)?;
    let (ground_truth, l) = load_ground_truth(gt_path)?;
    if ground_truth.len() != query_texts.len() {
        return Err(Error::Data(format!(
            "{}: {} queries, but {} declares {}",
            query_path.display(),
            query_texts.len(),
            gt_path.display(),
            ground_truth.len()
        )));
    }
    if l != label_texts.len() {
        return Err(Error::Data(format!(
            "{}: {} labels, but {} declares {}",
            label_path.display(),
            label_texts.len(),
            gt_path.display(),
            l
        )));
    }
    Dataset::new(query_texts, label_texts, ground_truth, split)
}

/// Aggregate corpus statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub queries_per_label: f64,
    pub labels_per_query: f64,
    pub pct_queries_with_images: f64,
    pub pct_labels_with_images: f64,
}

/// Mean positives per query / per label and image coverage percentages.
/// Missing banks count as zero coverage.
pub fn compute_stats(
    ds: &Dataset,
    query_bank: Option<&ImageBank>,
    label_bank: Option<&ImageBank>,
) -> Result<DatasetStats> {
    let m = ds.num_queries();
    let l = ds.num_labels();
    if m == 0 || l == 0 {
        return Err(Error::Data("stats undefined for an empty dataset".into()));
    }
    let pairs: usize = ds.ground_truth.iter().map(Vec::len).sum();
    let with_images = |bank: Option<&ImageBank>, n: usize| -> f64 {
        match bank {
            None => 0.0,
            Some(b) => {
                let c = (0..n).filter(|&i| b.has_images(i as u64)).count();
                100.0 * c as f64 / n as f64
            }
        }
    };
    Ok(DatasetStats {
        queries_per_label: pairs as f64 / l as f64,
        labels_per_query: pairs as f64 / m as f64,
        pct_queries_with_images: with_images(query_bank, m),
        pct_labels_with_images: with_images(label_bank, l),
    })
}

/// Configuration for the planted-cluster synthetic generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    /// Training queries; the test split defaults to a quarter of this.
    pub num_queries: usize,
    pub num_test_queries: Option<usize>,
    pub num_labels: usize,
    /// Must divide `num_labels`; also the number of image Gaussians.
    pub num_clusters: usize,
    /// Synthetic token inventory, sliced evenly across clusters.
    pub vocab_size: usize,
    /// Positives sampled per query from its cluster's label block.
    pub positives_per_query: usize,
    /// Fraction of queries whose text is drawn from a cluster-pair
    /// distribution that text alone cannot resolve.
    pub ambiguity_fraction: f64,
    pub image_dim: usize,
    /// Probability that an item receives an image vector.
    pub image_availability: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_queries: 2000,
            num_test_queries: None,
            num_labels: 500,
            num_clusters: 50,
            vocab_size: 2000,
            positives_per_query: 10,
            ambiguity_fraction: 0.0,
            image_dim: 8,
            image_availability: 1.0,
            seed: 1,
        }
    }
}

/// Everything the generator produces. Query image banks are per split
/// because both splits index their queries from zero.
#[derive(Debug)]
pub struct Synth {
    pub train: Dataset,
    pub test: Dataset,
    pub train_query_images: ImageBank,
    pub test_query_images: ImageBank,
    pub label_images: ImageBank,
    /// Ascending indices of ambiguous queries, per split.
    pub train_ambiguous: Vec<usize>,
    pub test_ambiguous: Vec<usize>,
}

const QUERY_TEXT_TOKENS: usize = 8;
const LABEL_TEXT_TOKENS: usize = 6;
const IMAGE_NOISE: f64 = 0.2;

fn validate_synth(cfg: &SynthConfig) -> Result<()> {
    if cfg.num_queries == 0 || cfg.num_labels == 0 || cfg.num_clusters == 0 {
        return Err(Error::Config(
            "queries, labels and clusters must be positive".into(),
        ));
    }
    if cfg.num_labels % cfg.num_clusters != 0 {
        return Err(Error::Config(format!(
            "num_clusters {} must divide num_labels {}",
            cfg.num_clusters, cfg.num_labels
        )));
    }
    if !(0.0..=1.0).contains(&cfg.ambiguity_fraction) {
        return Err(Error::Config(format!(
            "ambiguity_fraction {} outside [0, 1]",
            cfg.ambiguity_fraction
        )));
    }
    if !(0.0..=1.0).contains(&cfg.image_availability) {
        return Err(Error::Config(format!(
            "image_availability {} outside [0, 1]",
            cfg.image_availability
        )));
    }
    if cfg.vocab_size < cfg.num_clusters {
        return Err(Error::Config(format!(
            "vocab_size {} smaller than num_clusters {}: clusters need disjoint token slices",
            cfg.vocab_size, cfg.num_clusters
        )));
    }
    if cfg.positives_per_query == 0 || cfg.positives_per_query > cfg.num_labels / cfg.num_clusters {
        return Err(Error::Config(format!(
            "positives_per_query {} outside 1..={} (labels per cluster)",
            cfg.positives_per_query,
            cfg.num_labels / cfg.num_clusters
        )));
    }
    if cfg.image_dim == 0 {
        return Err(Error::Config("image_dim must be positive".into()));
    }
    Ok(())
}

/// Token slice `[lo, hi)` owned by a cluster.
fn cluster_slice(c: usize, num_clusters: usize, vocab: usize) -> (usize, usize) {
    (c * vocab / num_clusters, (c + 1) * vocab / num_clusters)
}

/// The paired cluster for ambiguity (identity for an unpaired tail).
fn partner(c: usize, num_clusters: usize) -> usize {
    let p = c ^ 1;
    if p < num_clusters { p } else { c }
}

/// Build a planted-cluster corpus pair with image banks.
///
/// Text for a regular query is sampled from its target cluster's token
/// slice; ambiguous queries sample from the union of their cluster pair's
/// slices (the same distribution for both halves of the pair, so text
/// cannot resolve the cluster). Image vectors are cluster Gaussians and
/// always resolve it. Positives are sampled from the target cluster's
/// label block. The ambiguous sets have exactly
/// `round(fraction * num_queries)` members per split.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Synth> {
    validate_synth(cfg)?;
    let mut rng = seeded_rng(cfg.seed);
    let c = cfg.num_clusters;
    let labels_per_cluster = cfg.num_labels / c;

    // Cluster image means: isotropic Gaussian draws, unit-normalized.
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut v: Vec<f64> = (0..cfg.image_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = crate::linalg::l2_norm(&v);
        for x in &mut v {
            *x /= n;
        }
        means.push(v);
    }

    let sample_tokens = |rng: &mut rand_chacha::ChaCha8Rng, lo: usize, hi: usize, n: usize| {
        let words: Vec<String> = (0..n)
            .map(|_| format!("w{}", rng.random_range(lo..hi)))
            .collect();
        words.join(" ")
    };
    let sample_pair_tokens =
        |rng: &mut rand_chacha::ChaCha8Rng, a: (usize, usize), b: (usize, usize), n: usize| {
            let total = (a.1 - a.0) + (b.1 - b.0);
            let words: Vec<String> = (0..n)
                .map(|_| {
                    let r = rng.random_range(0..total);
                    let t = if r < a.1 - a.0 {
                        a.0 + r
                    } else {
                        b.0 + (r - (a.1 - a.0))
                    };
                    format!("w{t}")
                })
                .collect();
            words.join(" ")
        };
    let sample_image = |rng: &mut rand_chacha::ChaCha8Rng, mean: &[f64]| -> Vec<f64> {
        mean.iter()
            .map(|&mu| mu + IMAGE_NOISE * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    // Labels: texts from the owning cluster's slice, images from its Gaussian.
    let mut label_texts = Vec::with_capacity(cfg.num_labels);
    let mut label_images = ImageBank::new(BankSide::Label, cfg.image_dim);
    for l in 0..cfg.num_labels {
        let cl = l / labels_per_cluster;
        let (lo, hi) = cluster_slice(cl, c, cfg.vocab_size);
        label_texts.push(sample_tokens(&mut rng, lo, hi, LABEL_TEXT_TOKENS));
        if rng.random::<f64>() < cfg.image_availability {
            let img = sample_image(&mut rng, &means[cl]);
            label_images.insert(l as u64, vec![img])?;
        }
    }

    // Exactly round(f * m) ambiguous indices, chosen by seeded shuffle.
    let pick_ambiguous = |rng: &mut rand_chacha::ChaCha8Rng, m: usize| -> Vec<usize> {
        let want = (cfg.ambiguity_fraction * m as f64).round() as usize;
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        let mut chosen: Vec<usize> = idx.into_iter().take(want).collect();
        chosen.sort_unstable();
        chosen
    };

    let build_split = |rng: &mut rand_chacha::ChaCha8Rng,
                       m: usize,
                       side_images: &mut ImageBank|
     -> Result<(Vec<String>, Vec<Vec<usize>>, Vec<usize>)> {
        let ambiguous = pick_ambiguous(rng, m);
        let mut is_amb = vec![false; m];
        for &i in &ambiguous {
            is_amb[i] = true;
        }
        let mut texts = Vec::with_capacity(m);
        let mut gt = Vec::with_capacity(m);
        for q in 0..m {
            let target = q % c;
            let text = if is_amb[q] {
                let a = cluster_slice(target, c, cfg.vocab_size);
                let b = cluster_slice(partner(target, c), c, cfg.vocab_size);
                sample_pair_tokens(rng, a, b, QUERY_TEXT_TOKENS)
            } else {
                let (lo, hi) = cluster_slice(target, c, cfg.vocab_size);
                sample_tokens(rng, lo, hi, QUERY_TEXT_TOKENS)
            };
            texts.push(text);

            let mut block: Vec<usize> =
                (target * labels_per_cluster..(target + 1) * labels_per_cluster).collect();
            block.shuffle(rng);
            let mut pos: Vec<usize> = block.into_iter().take(cfg.positives_per_query).collect();
            pos.sort_unstable();
            gt.push(pos);

            if rng.random::<f64>() < cfg.image_availability {
                let img = sample_image(rng, &means[target]);
                side_images.insert(q as u64, vec![img])?;
            }
        }
        Ok((texts, gt, ambiguous))
    };

    let mut train_query_images = ImageBank::new(BankSide::Query, cfg.image_dim);
    let (train_texts, train_gt, train_ambiguous) =
        build_split(&mut rng, cfg.num_queries, &mut train_query_images)?;

    let num_test = cfg.num_test_queries.unwrap_or((cfg.num_queries / 4).max(1));
    let mut test_query_images = ImageBank::new(BankSide::Query, cfg.image_dim);
    let (test_texts, test_gt, test_ambiguous) =
        build_split(&mut rng, num_test, &mut test_query_images)?;

    Ok(Synth {
        train: Dataset::new(train_texts, label_texts.clone(), train_gt, Split::Train)?,
        test: Dataset::new(test_texts, label_texts, test_gt, Split::Test)?,
        train_query_images,
        test_query_images,
        label_images,
        train_ambiguous,
        test_ambiguous,
    })
}

/// File names used inside a split directory.
pub mod split_files {
    pub const QUERIES: &str = "queries.txt";
    pub const LABELS: &str = "labels.txt";
    pub const GROUND_TRUTH: &str = "gt.txt";
    pub const QUERY_IMAGES: &str = "query_images.vixb";
    pub const LABEL_IMAGES: &str = "label_images.vixb";
    pub const AMBIGUOUS: &str = "ambiguous.txt";
}

/// Write one self-contained split directory.
pub fn save_split_dir(
    dir: &Path,
    ds: &Dataset,
    query_bank: Option<&ImageBank>,
    label_bank: Option<&ImageBank>,
    ambiguous: Option<&[usize]>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_texts(&dir.join(split_files::QUERIES), &ds.query_texts)?;
    save_texts(&dir.join(split_files::LABELS), &ds.label_texts)?;
    save_ground_truth(
        &dir.join(split_files::GROUND_TRUTH),
        &ds.ground_truth,
        ds.num_labels(),
    )?;
    if let Some(b) = query_bank {
        save_image_bank(&dir.join(split_files::QUERY_IMAGES), b)?;
    }
    if let Some(b) = label_bank {
        save_image_bank(&dir.join(split_files::LABEL_IMAGES), b)?;
    }
    if let Some(amb) = ambiguous {
        let mut out = String::new();
        for i in amb {
            out.push_str(&format!("{i}\n"));
        }
        let p = dir.join(split_files::AMBIGUOUS);
        fs::write(&p, out).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Load a split directory written by [`save_split_dir`]. Image banks are
/// optional on disk; absent files yield `None`.
pub fn load_split_dir(
    dir: &Path,
    split: Split,
) -> Result<(Dataset, Option<ImageBank>, Option<ImageBank>)> {
    let ds = load_dataset(
        &dir.join(split_files::QUERIES),
        &dir.join(split_files::LABELS),
        &dir.join(split_files::GROUND_TRUTH),
        split,
    )?;
    let qp = dir.join(split_files::QUERY_IMAGES);
    let lp = dir.join(split_files::LABEL_IMAGES);
    let qb = if qp.exists() {
        Some(load_image_bank(&qp, BankSide::Query)?)
    } else {
        None
    };
    let lb = if lp.exists() {
        Some(load_image_bank(&lp, BankSide::Label)?)
    } else {
        None
    };
    Ok((ds, qb, lb))
}

/// Load the ambiguous-query index list of a split directory (empty when
/// the file is absent).
pub fn load_ambiguous(dir: &Path) -> Result<Vec<usize>> {
    let p = dir.join(split_files::AMBIGUOUS);
    if !p.exists() {
        return Ok(Vec::new());
    }
    let raw = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let v: usize = line
            .trim()
            .parse()
            .map_err(|_| Error::format(&p, lineno + 1, format!("bad index {line:?}")))?;
        out.push(v);
    }
    Ok(out)
}

/// Generate a corpus and write `train/` and `test/` split directories.
pub fn generate_to_dir(cfg: &SynthConfig, out: &Path) -> Result<Synth> {
    let synth = generate_synthetic(cfg)?;
    save_split_dir(
        &out.join("train"),
        &synth.train,
        Some(&synth.train_query_images),
        Some(&synth.label_images),
        Some(&synth.train_ambiguous),
    )?;
    save_split_dir(
        &out.join("test"),
        &synth.test,
        Some(&synth.test_query_images),
        Some(&synth.label_images),
        Some(&synth.test_ambiguous),
    )?;
    Ok(synth)
}
