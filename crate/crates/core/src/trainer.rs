//! Training orchestration.
//!
//! Each epoch: (re)cluster query embeddings every `refresh_every` epochs
//! and refresh label centroids, then iterate intra-cluster batches. Per
//! batch the trainer samples one positive per query, builds the candidate
//! pool from the batch's positive label sets, embeds queries and pool
//! labels fresh, mines the hardest non-positive candidates, computes the
//! triplet hinge, backpropagates through objective and encoder, and steps
//! the optimizer. All randomness flows from the config seed through
//! purpose-tagged substreams, so a (config, data) pair fully determines
//! the final checkpoint bytes.

use std::time::Instant;

use rand::Rng;

use crate::config::parse_field;
use crate::corpus::{BankSide, Dataset, ImageBank, Split};
use crate::encoder::{self, Banks, Directionality, EncoderParams, GradientSet, embed_batch};
use crate::error::{Error, Result};
use crate::linalg::{Mat, axpy, dot, l2_norm};
use crate::mining::{self, LabelCentroids};
use crate::objective::{DEFAULT_MARGIN, Reduction, TripletBatch, triplet_grad, triplet_loss};
use crate::prompt::{PrefixSet, PromptMode, PromptSequence, Vocab, assemble_batch};
use crate::util::{derive_seed, seeded_rng};

/// Optimizer family; Adam hyperparameters live in [`TrainConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: PromptMode,
    pub max_len: usize,
    pub image_cap: usize,
    /// Embedding width.
    pub d: usize,
    /// Raw image-vector width.
    pub m: usize,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay (applies to either optimizer; 0 disables).
    pub weight_decay: f64,
    /// Recluster queries and refresh centroids every this many epochs.
    pub refresh_every: usize,
    pub num_clusters: usize,
    pub cluster_iters: usize,
    pub negatives_per_query: usize,
    /// Label embeddings used for mining and the loss are mixed with the
    /// label centroid: `normalize(alpha*h + (1-alpha)*centroid)`. 1.0
    /// disables the mix.
    pub centroid_alpha: f64,
    pub reduction: Reduction,
    pub vocab_max: usize,
    /// `None` picks the natural attention regime for the prompt mode.
    pub directionality: Option<Directionality>,
    pub prefixes: PrefixSet,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: PromptMode::DecoderText,
            max_len: 32,
            image_cap: 3,
            d: 32,
            m: 8,
            margin: DEFAULT_MARGIN,
            batch_size: 64,
            epochs: 10,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Sgd,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            refresh_every: 5,
            num_clusters: 10,
            cluster_iters: 5,
            negatives_per_query: 5,
            centroid_alpha: 1.0,
            reduction: Reduction::Sum,
            vocab_max: 20_000,
            directionality: None,
            prefixes: PrefixSet::default(),
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// Apply one `key=value` pair; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "mode" => self.mode = value.parse()?,
            "max_len" => self.max_len = parse_field(key, value)?,
            "image_cap" => self.image_cap = parse_field(key, value)?,
            "d" => self.d = parse_field(key, value)?,
            "m" => self.m = parse_field(key, value)?,
            "margin" => self.margin = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "learning_rate" => self.learning_rate = parse_field(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "adam_beta1" => self.adam_beta1 = parse_field(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_field(key, value)?,
            "adam_eps" => self.adam_eps = parse_field(key, value)?,
            "weight_decay" => self.weight_decay = parse_field(key, value)?,
            "refresh_every" => self.refresh_every = parse_field(key, value)?,
            "num_clusters" => self.num_clusters = parse_field(key, value)?,
            "cluster_iters" => self.cluster_iters = parse_field(key, value)?,
            "negatives_per_query" => self.negatives_per_query = parse_field(key, value)?,
            "centroid_alpha" => self.centroid_alpha = parse_field(key, value)?,
            "reduction" => self.reduction = value.parse()?,
            "vocab_max" => self.vocab_max = parse_field(key, value)?,
            "directionality" => {
                self.directionality = if value == "auto" {
                    None
                } else {
                    Some(value.parse()?)
                };
            }
            "prefix_text_lead" => self.prefixes.text_lead = value.to_string(),
            "prefix_text_follow" => self.prefixes.text_follow = value.to_string(),
            "prefix_image_lead" => self.prefixes.image_lead = value.to_string(),
            "prefix_image_follow" => self.prefixes.image_follow = value.to_string(),
            "seed" => self.seed = parse_field(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field as `key=value` pairs, in a fixed order that
    /// [`TrainConfig::from_pairs`] maps back to an equal config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let dir = match self.directionality {
            None => "auto".to_string(),
            Some(d) => d.as_str().to_string(),
        };
        [
            ("mode", self.mode.as_str().to_string()),
            ("max_len", self.max_len.to_string()),
            ("image_cap", self.image_cap.to_string()),
            ("d", self.d.to_string()),
            ("m", self.m.to_string()),
            ("margin", self.margin.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("optimizer", self.optimizer.as_str().to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("refresh_every", self.refresh_every.to_string()),
            ("num_clusters", self.num_clusters.to_string()),
            ("cluster_iters", self.cluster_iters.to_string()),
            ("negatives_per_query", self.negatives_per_query.to_string()),
            ("centroid_alpha", self.centroid_alpha.to_string()),
            ("reduction", self.reduction.as_str().to_string()),
            ("vocab_max", self.vocab_max.to_string()),
            ("directionality", dir),
            ("prefix_text_lead", self.prefixes.text_lead.clone()),
            ("prefix_text_follow", self.prefixes.text_follow.clone()),
            ("prefix_image_lead", self.prefixes.image_lead.clone()),
            ("prefix_image_follow", self.prefixes.image_follow.clone()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.epochs >= 1, "epochs must be >= 1")?;
        check(self.batch_size >= 2, "batch_size must be >= 2")?;
        check(self.max_len >= 1, "max_len must be >= 1")?;
        check(self.d >= 1 && self.m >= 1, "d and m must be >= 1")?;
        check(
            self.margin.is_finite() && self.margin >= 0.0,
            "margin must be >= 0",
        )?;
        check(
            self.learning_rate.is_finite() && self.learning_rate >= 0.0,
            "learning_rate must be >= 0",
        )?;
        check(
            self.weight_decay.is_finite() && self.weight_decay >= 0.0,
            "weight_decay must be >= 0",
        )?;
        check(self.refresh_every >= 1, "refresh_every must be >= 1")?;
        check(self.num_clusters >= 1, "num_clusters must be >= 1")?;
        check(self.cluster_iters >= 1, "cluster_iters must be >= 1")?;
        check(
            self.negatives_per_query >= 1,
            "negatives_per_query must be >= 1",
        )?;
        check(
            (0.0..=1.0).contains(&self.centroid_alpha),
            "centroid_alpha must be in [0, 1]",
        )?;
        check(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2),
            "adam betas must be in [0, 1)",
        )?;
        check(self.adam_eps > 0.0, "adam_eps must be > 0")?;
        self.prefixes.validate()
    }

    /// The attention regime: explicit override, or the prompt mode's
    /// natural choice.
    pub fn resolved_directionality(&self) -> Directionality {
        self.directionality
            .unwrap_or(Directionality::for_mode(self.mode))
    }
}

/// Moment buffers for Adam; Sgd keeps none.
pub struct OptState {
    t: u64,
    moments: Option<Box<(GradientSet, GradientSet)>>,
}

impl OptState {
    pub fn new(cfg: &TrainConfig, params: &EncoderParams) -> OptState {
        let moments = match cfg.optimizer {
            OptimizerKind::Sgd => None,
            OptimizerKind::Adam => Some(Box::new((
                GradientSet::zeros_like(params),
                GradientSet::zeros_like(params),
            ))),
        };
        OptState { t: 0, moments }
    }
}

/// One optimizer update, in place. Decoupled weight decay multiplies the
/// parameters by `1 - lr*wd` before the gradient term for both families.
pub fn step(
    params: &mut EncoderParams,
    grads: &GradientSet,
    state: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    let lr = cfg.learning_rate;
    let decay = 1.0 - lr * cfg.weight_decay;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                    *pv = *pv * decay - lr * gv;
                }
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            let bc1 = 1.0 - b1.powi(state.t as i32);
            let bc2 = 1.0 - b2.powi(state.t as i32);
            let (m, v) = &mut **state.moments.as_mut().expect("adam state");
            for (((p, g), m), v) in params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(m.tensors_mut())
                .zip(v.tensors_mut())
            {
                for (((pv, gv), mv), vv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut())
                    .zip(v.data_mut().iter_mut())
                {
                    *mv = b1 * *mv + (1.0 - b1) * gv;
                    *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                    let update = (*mv / bc1) / ((*vv / bc2).sqrt() + eps);
                    *pv = *pv * decay - lr * update;
                }
            }
        }
    }
    for t in params.tensors() {
        if t.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "non-finite parameter after optimizer step".into(),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Reduced loss summed over the epoch's batches.
    pub loss: f64,
    /// Fraction of hinge terms strictly active across the epoch.
    pub active_frac: f64,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefreshStats {
    pub epoch: usize,
    pub num_clusters: usize,
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    pub valid_centroids: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub refreshes: Vec<RefreshStats>,
}

impl TrainLog {
    /// `epoch\tloss\tactive_frac\tseconds` rows under a header line.
    pub fn epochs_tsv(&self) -> String {
        let mut s = String::from("epoch\tloss\tactive_frac\tseconds\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{:.3}\n",
                e.epoch, e.loss, e.active_frac, e.seconds
            ));
        }
        s
    }

    pub fn refreshes_tsv(&self) -> String {
        let mut s = String::from("epoch\tclusters\tmin_size\tmax_size\tvalid_centroids\n");
        for r in &self.refreshes {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.epoch, r.num_clusters, r.min_cluster_size, r.max_cluster_size, r.valid_centroids
            ));
        }
        s
    }
}

pub struct TrainOutput {
    pub params: EncoderParams,
    pub vocab: Vocab,
    pub log: TrainLog,
}

/// Blend pool label embeddings with their centroids:
/// `normalize(alpha*h + (1-alpha)*c)` wherever the centroid is valid.
/// Returns the blended rows plus, per row, the pre-normalization norm
/// (`None` marks pass-through rows). `alpha = 1` is the identity.
fn mix_label_rows(
    raw: &Mat,
    cents: &LabelCentroids,
    pool: &[usize],
    alpha: f64,
) -> (Mat, Vec<Option<f64>>) {
    let mut mixed = raw.clone();
    let mut norms = vec![None; raw.rows()];
    if alpha >= 1.0 {
        return (mixed, norms);
    }
    for (r, &label) in pool.iter().enumerate() {
        if !cents.valid[label] {
            continue;
        }
        let mut u: Vec<f64> = raw.row(r).iter().map(|&v| alpha * v).collect();
        axpy(&mut u, 1.0 - alpha, cents.centroids.row(label));
        let norm = l2_norm(&u);
        if norm <= 1e-12 {
            continue; // antipodal blend; keep the raw embedding
        }
        for v in &mut u {
            *v /= norm;
        }
        mixed.row_mut(r).copy_from_slice(&u);
        norms[r] = Some(norm);
    }
    (mixed, norms)
}

/// Chain rule through [`mix_label_rows`]: rows that were blended map the
/// upstream gradient `g` to `alpha/norm * (g - h'(h'.g))`; pass-through
/// rows forward `g` unchanged.
fn unmix_grad(d_mixed: &Mat, mixed: &Mat, norms: &[Option<f64>], alpha: f64) -> Mat {
    let mut out = d_mixed.clone();
    for (r, norm) in norms.iter().enumerate() {
        let Some(norm) = norm else { continue };
        let g = d_mixed.row(r);
        let h = mixed.row(r);
        let hg = dot(h, g);
        let row = out.row_mut(r);
        for i in 0..row.len() {
            row[i] = alpha / norm * (g[i] - h[i] * hg);
        }
    }
    out
}

// Purpose tags for seed derivation; arbitrary but fixed.
const TAG_INIT: u64 = 0x696e6974; // "init"
const TAG_CLUSTER: u64 = 0x636c7573; // "clus"
const TAG_BATCH: u64 = 0x62617463; // "batc"
const TAG_POSITIVE: u64 = 0x706f7369; // "posi"

/// Train and return the final parameters, the vocabulary the prompts were
/// tokenized with, and the per-epoch log. `on_refresh` fires at every
/// refresh epoch (including epoch 0) with the parameters as they stood
/// when the refresh ran; the CLI uses it to checkpoint.
pub fn train_with(
    ds: &Dataset,
    query_bank: Option<&ImageBank>,
    label_bank: Option<&ImageBank>,
    cfg: &TrainConfig,
    mut on_refresh: impl FnMut(usize, &EncoderParams) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if ds.split != Split::Train {
        return Err(Error::Data(
            "training requires a train split (every query labeled)".into(),
        ));
    }
    let m_queries = ds.num_queries();
    let l_labels = ds.num_labels();
    if cfg.num_clusters > m_queries {
        return Err(Error::Config(format!(
            "num_clusters {} exceeds the {} training queries",
            cfg.num_clusters, m_queries
        )));
    }
    let banks = Banks {
        query: query_bank,
        label: label_bank,
    };

    let vocab = Vocab::build(
        ds.query_texts
            .iter()
            .map(String::as_str)
            .chain(ds.label_texts.iter().map(String::as_str)),
        cfg.vocab_max,
        cfg.prefixes.clone(),
    )?;
    let query_items: Vec<(u64, &str)> = ds
        .query_texts
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t.as_str()))
        .collect();
    let query_seqs = assemble_batch(
        &query_items,
        BankSide::Query,
        query_bank,
        cfg.mode,
        cfg.max_len,
        cfg.image_cap,
        &vocab,
    )?;
    let label_items: Vec<(u64, &str)> = ds
        .label_texts
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t.as_str()))
        .collect();
    let label_seqs = assemble_batch(
        &label_items,
        BankSide::Label,
        label_bank,
        cfg.mode,
        cfg.max_len,
        cfg.image_cap,
        &vocab,
    )?;

    let mut params = EncoderParams::init(
        vocab.size(),
        cfg.d,
        cfg.m,
        cfg.resolved_directionality(),
        derive_seed(cfg.seed, TAG_INIT),
    );
    let mut opt = OptState::new(cfg, &params);
    let mut cents = LabelCentroids::empty(l_labels, cfg.d);
    let mut clusters = None;
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        let tick = Instant::now();
        if epoch % cfg.refresh_every == 0 {
            let q_embs = embed_batch(&params, &query_seqs, &banks)?;
            let assignment = mining::cluster_queries(
                &q_embs,
                cfg.num_clusters,
                derive_seed(derive_seed(cfg.seed, TAG_CLUSTER), epoch as u64),
                cfg.cluster_iters,
            )?;
            cents = mining::refresh_centroids(&q_embs, &ds.ground_truth, &cents)?;
            let sizes: Vec<usize> = assignment.members().iter().map(Vec::len).collect();
            log.refreshes.push(RefreshStats {
                epoch,
                num_clusters: assignment.num_clusters,
                min_cluster_size: sizes.iter().copied().min().unwrap_or(0),
                max_cluster_size: sizes.iter().copied().max().unwrap_or(0),
                valid_centroids: cents.valid.iter().filter(|&&v| v).count(),
            });
            clusters = Some(assignment);
            on_refresh(epoch, &params)?;
        }
        let assignment = clusters.as_ref().expect("epoch 0 always refreshes");
        let batches = make_epoch_batches(assignment, cfg, epoch);
        let mut pos_rng = seeded_rng(derive_seed(
            derive_seed(cfg.seed, TAG_POSITIVE),
            epoch as u64,
        ));

        let mut epoch_loss = 0.0;
        let mut active = 0usize;
        let mut total = 0usize;
        for (bi, batch) in batches.iter().enumerate() {
            let batch_seqs: Vec<PromptSequence> =
                batch.iter().map(|&q| query_seqs[q].clone()).collect();
            let q_embs = embed_batch(&params, &batch_seqs, &banks)?;

            let mut pool: Vec<usize> = batch
                .iter()
                .flat_map(|&q| ds.ground_truth[q].iter().copied())
                .collect();
            pool.sort_unstable();
            pool.dedup();
            let pool_seqs: Vec<PromptSequence> =
                pool.iter().map(|&l| label_seqs[l].clone()).collect();
            let raw_label_embs = embed_batch(&params, &pool_seqs, &banks)?;
            let (mixed, mix_norms) =
                mix_label_rows(&raw_label_embs, &cents, &pool, cfg.centroid_alpha);

            let mut positives = Vec::with_capacity(batch.len());
            let mut negatives = Vec::with_capacity(batch.len());
            for (row, &q) in batch.iter().enumerate() {
                let own = &ds.ground_truth[q];
                let sampled = own[pos_rng.random_range(0..own.len())];
                let sampled_pos = pool.binary_search(&sampled).expect("positive is in pool");
                positives.push(vec![sampled_pos]);
                let neg_ids = mining::select_hard_negatives(
                    q_embs.row(row),
                    &mixed,
                    &pool,
                    own,
                    cfg.negatives_per_query,
                );
                negatives.push(
                    neg_ids
                        .iter()
                        .map(|id| pool.binary_search(id).expect("negative is in pool"))
                        .collect(),
                );
            }

            let tb = TripletBatch::new(q_embs, mixed, positives, negatives, cfg.margin)?;
            let stats = triplet_loss(&tb, cfg.reduction);
            if !stats.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} batch {bi}: non-finite loss {}",
                    stats.loss
                )));
            }
            epoch_loss += stats.loss;
            active += stats.active;
            total += stats.total;

            let (dq, dl_mixed) = triplet_grad(&tb, cfg.reduction);
            let dl_raw = unmix_grad(&dl_mixed, &tb.label_embs, &mix_norms, cfg.centroid_alpha);
            let mut grads = encoder::backward(&params, &batch_seqs, &banks, &dq)?;
            let label_grads = encoder::backward(&params, &pool_seqs, &banks, &dl_raw)?;
            grads.add_assign(&label_grads);
            step(&mut params, &grads, &mut opt, cfg)
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}")))?;
        }
        log.epochs.push(EpochStats {
            epoch,
            loss: epoch_loss,
            active_frac: if total == 0 {
                0.0
            } else {
                active as f64 / total as f64
            },
            seconds: tick.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutput { params, vocab, log })
}

fn make_epoch_batches(
    assignment: &mining::ClusterAssignment,
    cfg: &TrainConfig,
    epoch: usize,
) -> Vec<Vec<usize>> {
    mining::make_batches(
        assignment,
        cfg.batch_size,
        derive_seed(derive_seed(cfg.seed, TAG_BATCH), epoch as u64),
    )
}

/// [`train_with`] without a refresh callback.
pub fn train(
    ds: &Dataset,
    query_bank: Option<&ImageBank>,
    label_bank: Option<&ImageBank>,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_with(ds, query_bank, label_bank, cfg, |_, _| Ok(()))
}
