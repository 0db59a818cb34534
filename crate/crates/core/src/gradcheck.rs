//! End-to-end gradient verification.
//!
//! Builds small random fixtures (parameters, prompts, image banks, and a
//! triplet batch), computes the analytic gradient of the triplet loss
//! through the whole encoder, and compares every parameter element
//! against central finite differences. Fixtures whose hinge terms sit
//! too close to the kink are rerolled, since the loss is not
//! differentiable there.

use rayon::prelude::*;

use rand::Rng;
use rand::seq::SliceRandom;

use crate::corpus::{BankSide, ImageBank};
use crate::encoder::{self, Banks, Directionality, EncoderParams, embed_batch};
use crate::error::{Error, Result};
use crate::objective::{Reduction, TripletBatch, triplet_grad, triplet_loss};
use crate::prompt::{PrefixSet, PromptMode, PromptSequence, Vocab, assemble_batch};
use crate::util::{derive_seed, seeded_rng};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Embedding width (keep small: every element costs two forward passes).
    pub d: usize,
    /// Raw image-vector width.
    pub m: usize,
    pub max_len: usize,
    pub num_queries: usize,
    pub num_labels: usize,
    pub vocab_words: usize,
    /// Prompt template; `None` rotates through all templates per fixture.
    pub mode: Option<PromptMode>,
    /// Central-difference step.
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            d: 4,
            m: 3,
            max_len: 6,
            num_queries: 3,
            num_labels: 6,
            vocab_words: 12,
            mode: None,
            h: 1e-4,
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub fixtures: usize,
    pub elements_checked: usize,
}

/// Hinge terms closer to the kink than this force a fixture reroll.
const KINK_TOL: f64 = 1e-3;
/// Relative-error denominators are floored here so near-zero pairs are
/// compared absolutely.
const REL_FLOOR: f64 = 1e-3;

const ALL_MODES: [PromptMode; 8] = [
    PromptMode::EncoderPlain,
    PromptMode::EncoderFused,
    PromptMode::PrefixText,
    PromptMode::DecoderText,
    PromptMode::ImagesFirst,
    PromptMode::TextThenImages,
    PromptMode::ImagesFirstPrefixed,
    PromptMode::DecoderFused,
];

struct Fixture {
    params: EncoderParams,
    query_seqs: Vec<PromptSequence>,
    label_seqs: Vec<PromptSequence>,
    query_bank: ImageBank,
    label_bank: ImageBank,
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    margin: f64,
    reduction: Reduction,
}

impl Fixture {
    fn banks(&self) -> Banks<'_> {
        Banks {
            query: Some(&self.query_bank),
            label: Some(&self.label_bank),
        }
    }

    fn loss(&self, params: &EncoderParams) -> Result<f64> {
        let banks = self.banks();
        let q = embed_batch(params, &self.query_seqs, &banks)?;
        let l = embed_batch(params, &self.label_seqs, &banks)?;
        let tb = TripletBatch::new(
            q,
            l,
            self.positives.clone(),
            self.negatives.clone(),
            self.margin,
        )?;
        Ok(triplet_loss(&tb, self.reduction).loss)
    }

    /// Smallest |hinge| across the batch; FD is only trustworthy when no
    /// term sits on the kink.
    fn kink_distance(&self, params: &EncoderParams) -> Result<f64> {
        let banks = self.banks();
        let q = embed_batch(params, &self.query_seqs, &banks)?;
        let l = embed_batch(params, &self.label_seqs, &banks)?;
        let mut dist = f64::INFINITY;
        for (i, (ps, ns)) in self.positives.iter().zip(&self.negatives).enumerate() {
            for &p in ps {
                for &n in ns {
                    let sp: f64 = q.row(i).iter().zip(l.row(p)).map(|(a, b)| a * b).sum();
                    let sn: f64 = q.row(i).iter().zip(l.row(n)).map(|(a, b)| a * b).sum();
                    dist = dist.min((sn - sp + self.margin).abs());
                }
            }
        }
        Ok(dist)
    }
}

fn random_text(rng: &mut impl Rng, vocab_words: usize) -> String {
    let n = rng.random_range(1..=3);
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..vocab_words)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_bank(rng: &mut impl Rng, side: BankSide, items: usize, m: usize) -> Result<ImageBank> {
    let mut bank = ImageBank::new(side, m);
    for item in 0..items {
        let count = rng.random_range(0..=2);
        if count == 0 {
            continue; // some items stay imageless to cover degraded prompts
        }
        let imgs = (0..count)
            .map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        bank.insert(item as u64, imgs)?;
    }
    Ok(bank)
}

fn build_fixture(cfg: &GradCheckConfig, fixture_seed: u64) -> Result<Fixture> {
    let mut rng = seeded_rng(fixture_seed);
    let mode = cfg
        .mode
        .unwrap_or_else(|| ALL_MODES[rng.random_range(0..ALL_MODES.len())]);

    let query_texts: Vec<String> = (0..cfg.num_queries)
        .map(|_| random_text(&mut rng, cfg.vocab_words))
        .collect();
    let label_texts: Vec<String> = (0..cfg.num_labels)
        .map(|_| random_text(&mut rng, cfg.vocab_words))
        .collect();
    let corpus: Vec<&str> = query_texts
        .iter()
        .chain(&label_texts)
        .map(String::as_str)
        .collect();
    // Single-token prefixes keep every template's fixed parts inside the
    // deliberately tiny max_len.
    let prefixes = PrefixSet {
        text_lead: "lead".into(),
        text_follow: "follow".into(),
        image_lead: "pic".into(),
        image_follow: "pics".into(),
    };
    let vocab = Vocab::build(corpus, cfg.vocab_words + 16, prefixes)?;

    let query_bank = random_bank(&mut rng, BankSide::Query, cfg.num_queries, cfg.m)?;
    let label_bank = random_bank(&mut rng, BankSide::Label, cfg.num_labels, cfg.m)?;

    let query_items: Vec<(u64, &str)> = query_texts
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t.as_str()))
        .collect();
    let label_items: Vec<(u64, &str)> = label_texts
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t.as_str()))
        .collect();
    let query_seqs = assemble_batch(
        &query_items,
        BankSide::Query,
        Some(&query_bank),
        mode,
        cfg.max_len,
        2,
        &vocab,
    )?;
    let label_seqs = assemble_batch(
        &label_items,
        BankSide::Label,
        Some(&label_bank),
        mode,
        cfg.max_len,
        2,
        &vocab,
    )?;

    let mut positives = Vec::with_capacity(cfg.num_queries);
    let mut negatives = Vec::with_capacity(cfg.num_queries);
    let mut ids: Vec<usize> = (0..cfg.num_labels).collect();
    for _ in 0..cfg.num_queries {
        ids.shuffle(&mut rng);
        let p_cnt = rng.random_range(1..=2);
        let mut p: Vec<usize> = ids[..p_cnt].to_vec();
        let mut n: Vec<usize> = ids[p_cnt..p_cnt + 2].to_vec();
        p.sort_unstable();
        n.sort_unstable();
        positives.push(p);
        negatives.push(n);
    }

    let directionality = if rng.random_range(0..2) == 0 {
        Directionality::for_mode(mode)
    } else {
        Directionality::Bidirectional
    };
    let mut params = EncoderParams::init(
        vocab.size(),
        cfg.d,
        cfg.m,
        directionality,
        derive_seed(fixture_seed, 0x7061726d),
    );
    // Widen the random parameters beyond fresh-init scale: pooled vectors
    // then have healthy norms, keeping the normalization step's higher
    // derivatives small so central differences stay near their h^2 ideal.
    for t in params.tensors_mut() {
        t.scale(10.0);
    }
    let margin = rng.random_range(0.2..0.5);
    let reduction = if rng.random_range(0..2) == 0 {
        Reduction::Sum
    } else {
        Reduction::Mean
    };

    Ok(Fixture {
        params,
        query_seqs,
        label_seqs,
        query_bank,
        label_bank,
        positives,
        negatives,
        margin,
        reduction,
    })
}

/// Max relative error between analytic and central-difference gradients
/// for one fixture, along with the number of elements compared.
pub fn check_fixture(cfg: &GradCheckConfig, fixture_seed: u64) -> Result<(f64, usize)> {
    let mut fixture = None;
    for attempt in 0..200u64 {
        let cand = build_fixture(cfg, derive_seed(fixture_seed, attempt))?;
        if cand.kink_distance(&cand.params)? >= KINK_TOL {
            fixture = Some(cand);
            break;
        }
    }
    let fixture = fixture.ok_or_else(|| {
        Error::Numeric("no kink-free gradient-check fixture found in 200 attempts".into())
    })?;

    let banks = fixture.banks();
    let q = embed_batch(&fixture.params, &fixture.query_seqs, &banks)?;
    let l = embed_batch(&fixture.params, &fixture.label_seqs, &banks)?;
    let tb = TripletBatch::new(
        q,
        l,
        fixture.positives.clone(),
        fixture.negatives.clone(),
        fixture.margin,
    )?;
    let (dq, dl) = triplet_grad(&tb, fixture.reduction);
    let mut analytic = encoder::backward(&fixture.params, &fixture.query_seqs, &banks, &dq)?;
    let label_part = encoder::backward(&fixture.params, &fixture.label_seqs, &banks, &dl)?;
    analytic.add_assign(&label_part);

    let mut max_rel = 0.0f64;
    let mut elements = 0usize;
    for ti in 0..7 {
        let len = fixture.params.tensors()[ti].data().len();
        for idx in 0..len {
            let mut up = fixture.params.clone();
            up.tensors_mut()[ti].data_mut()[idx] += cfg.h;
            let mut dn = fixture.params.clone();
            dn.tensors_mut()[ti].data_mut()[idx] -= cfg.h;
            let fd = (fixture.loss(&up)? - fixture.loss(&dn)?) / (2.0 * cfg.h);
            let an = analytic.tensors()[ti].data()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
            elements += 1;
        }
    }
    Ok((max_rel, elements))
}

/// Run `fixtures` independent checks (in parallel) and fold the worst
/// relative error.
pub fn run(cfg: &GradCheckConfig, fixtures: usize) -> Result<GradCheckReport> {
    if cfg.d == 0 || cfg.d > 8 || cfg.max_len == 0 || cfg.max_len > 8 {
        return Err(Error::Config(
            "gradient check wants 1 <= d <= 8 and 1 <= max_len <= 8".into(),
        ));
    }
    if fixtures == 0 {
        return Err(Error::Config("need at least one fixture".into()));
    }
    let results: Vec<(f64, usize)> = (0..fixtures)
        .into_par_iter()
        .map(|i| check_fixture(cfg, derive_seed(cfg.seed, i as u64)))
        .collect::<Result<_>>()?;
    let max_rel_error = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let elements_checked = results.iter().map(|r| r.1).sum();
    Ok(GradCheckReport {
        max_rel_error,
        fixtures,
        elements_checked,
    })
}
