//! Shared sentence encoder over prompt sequences.
//!
//! Pipeline: resolve each valid slot to a d-vector (token table row or a
//! learned linear projection of a frozen image vector), apply one residual
//! single-head self-attention layer with `softmax(QK^T / sqrt(d))`, mean
//! pool over the valid slots, and L2-normalize. Gradients are exact
//! reverse-mode derivatives computed by hand; every reduction runs in a
//! fixed order so results are bit-identical across thread counts.

use rand::Rng;
use rayon::prelude::*;

use crate::bytes::{BinReader, write_atomic};
use crate::corpus::{BankSide, ImageBank};
use crate::error::{Error, Result};
use crate::linalg::{Mat, axpy, dot, l2_norm};
use crate::prompt::{PromptMode, PromptSequence, Slot};
use crate::util::seeded_rng;

/// Attention masking regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Directionality {
    /// Every valid slot attends to every valid slot.
    Bidirectional,
    /// Slot `i` attends to valid slots `0..=i`.
    Causal,
}

impl Directionality {
    /// The natural regime for a prompt template: terminated decoder-style
    /// prompts read causally, bare encoder layouts bidirectionally.
    pub fn for_mode(mode: PromptMode) -> Self {
        match mode {
            PromptMode::EncoderPlain | PromptMode::EncoderFused => Directionality::Bidirectional,
            _ => Directionality::Causal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Directionality::Bidirectional => "bidirectional",
            Directionality::Causal => "causal",
        }
    }
}

impl std::str::FromStr for Directionality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bidirectional" => Ok(Directionality::Bidirectional),
            "causal" => Ok(Directionality::Causal),
            _ => Err(Error::Config(format!("unknown directionality {s:?}"))),
        }
    }
}

/// The image banks an embedding pass may reference.
#[derive(Clone, Copy, Default)]
pub struct Banks<'a> {
    pub query: Option<&'a ImageBank>,
    pub label: Option<&'a ImageBank>,
}

impl<'a> Banks<'a> {
    pub fn none() -> Self {
        Banks {
            query: None,
            label: None,
        }
    }

    fn get(&self, side: BankSide) -> Option<&'a ImageBank> {
        match side {
            BankSide::Query => self.query,
            BankSide::Label => self.label,
        }
    }
}

/// All trainable tensors. Shapes: token table `|V| x d`, image projection
/// `d x m` plus bias `d x 1`, four attention matrices `d x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub directionality: Directionality,
    pub token_table: Mat,
    pub image_proj_w: Mat,
    pub image_proj_b: Mat,
    pub attn_wq: Mat,
    pub attn_wk: Mat,
    pub attn_wv: Mat,
    pub attn_wo: Mat,
}

const INIT_SCALE: f64 = 0.05;

impl EncoderParams {
    /// Seeded i.i.d. uniform `[-0.05, 0.05]` initialization, filling the
    /// tensors in declaration order.
    pub fn init(
        vocab_size: usize,
        d: usize,
        m: usize,
        directionality: Directionality,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_rng(seed);
        let mut fill = |rows: usize, cols: usize| {
            let mut t = Mat::zeros(rows, cols);
            for v in t.data_mut() {
                *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
            }
            t
        };
        EncoderParams {
            directionality,
            token_table: fill(vocab_size, d),
            image_proj_w: fill(d, m),
            image_proj_b: fill(d, 1),
            attn_wq: fill(d, d),
            attn_wk: fill(d, d),
            attn_wv: fill(d, d),
            attn_wo: fill(d, d),
        }
    }

    pub fn d(&self) -> usize {
        self.attn_wq.rows()
    }

    pub fn m(&self) -> usize {
        self.image_proj_w.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.rows()
    }

    pub fn tensors(&self) -> [&Mat; 7] {
        [
            &self.token_table,
            &self.image_proj_w,
            &self.image_proj_b,
            &self.attn_wq,
            &self.attn_wk,
            &self.attn_wv,
            &self.attn_wo,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 7] {
        [
            &mut self.token_table,
            &mut self.image_proj_w,
            &mut self.image_proj_b,
            &mut self.attn_wq,
            &mut self.attn_wk,
            &mut self.attn_wv,
            &mut self.attn_wo,
        ]
    }
}

/// Gradients with the same shapes as [`EncoderParams`].
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub token_table: Mat,
    pub image_proj_w: Mat,
    pub image_proj_b: Mat,
    pub attn_wq: Mat,
    pub attn_wk: Mat,
    pub attn_wv: Mat,
    pub attn_wo: Mat,
}

impl GradientSet {
    pub fn zeros_like(p: &EncoderParams) -> Self {
        GradientSet {
            token_table: Mat::zeros(p.token_table.rows(), p.token_table.cols()),
            image_proj_w: Mat::zeros(p.image_proj_w.rows(), p.image_proj_w.cols()),
            image_proj_b: Mat::zeros(p.image_proj_b.rows(), p.image_proj_b.cols()),
            attn_wq: Mat::zeros(p.attn_wq.rows(), p.attn_wq.cols()),
            attn_wk: Mat::zeros(p.attn_wk.rows(), p.attn_wk.cols()),
            attn_wv: Mat::zeros(p.attn_wv.rows(), p.attn_wv.cols()),
            attn_wo: Mat::zeros(p.attn_wo.rows(), p.attn_wo.cols()),
        }
    }

    pub fn tensors(&self) -> [&Mat; 7] {
        [
            &self.token_table,
            &self.image_proj_w,
            &self.image_proj_b,
            &self.attn_wq,
            &self.attn_wk,
            &self.attn_wv,
            &self.attn_wo,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 7] {
        [
            &mut self.token_table,
            &mut self.image_proj_w,
            &mut self.image_proj_b,
            &mut self.attn_wq,
            &mut self.attn_wk,
            &mut self.attn_wv,
            &mut self.attn_wo,
        ]
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        let mine = self.tensors_mut();
        let theirs = other.tensors();
        for (a, b) in mine.into_iter().zip(theirs) {
            a.add_scaled(b, 1.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

/// The resolved input behind one valid slot (kept for the backward pass).
enum SlotInput {
    Token(usize),
    Image(Vec<f64>),
}

/// Everything the forward pass computes for one sequence.
struct Forward {
    n: usize,
    inputs: Vec<SlotInput>,
    x: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Row `i` holds the attention weights over its visible range.
    attn: Vec<Vec<f64>>,
    ctx: Mat,
    norm: f64,
    h: Vec<f64>,
}

fn visible(dir: Directionality, i: usize, n: usize) -> usize {
    match dir {
        Directionality::Bidirectional => n,
        Directionality::Causal => i + 1,
    }
}

fn resolve_slot(p: &EncoderParams, slot: &Slot, banks: &Banks) -> Result<(SlotInput, Vec<f64>)> {
    match *slot {
        Slot::Token(t) => {
            let id = t as usize;
            if id >= p.vocab_size() {
                return Err(Error::Data(format!(
                    "token id {id} out of range (vocab size {})",
                    p.vocab_size()
                )));
            }
            Ok((SlotInput::Token(id), p.token_table.row(id).to_vec()))
        }
        Slot::Image(r) => {
            let bank = banks.get(r.side).ok_or_else(|| {
                Error::Data(format!(
                    "prompt references a {} image but no {} bank is loaded",
                    r.side, r.side
                ))
            })?;
            if bank.dim != p.m() {
                return Err(Error::Data(format!(
                    "{} bank dim {} does not match encoder image dim {}",
                    r.side,
                    bank.dim,
                    p.m()
                )));
            }
            let images = bank.images(r.item).ok_or_else(|| {
                Error::Data(format!(
                    "item {} absent from the {} image bank",
                    r.item, r.side
                ))
            })?;
            let vec = images.get(r.ordinal as usize).ok_or_else(|| {
                Error::Data(format!(
                    "item {} has {} images; ordinal {} unresolvable",
                    r.item,
                    images.len(),
                    r.ordinal
                ))
            })?;
            let mut out = vec![0.0; p.d()];
            p.image_proj_w.matvec(vec, &mut out);
            for (o, b) in out.iter_mut().zip(p.image_proj_b.data()) {
                *o += b;
            }
            Ok((SlotInput::Image(vec.clone()), out))
        }
    }
}

fn forward(p: &EncoderParams, seq: &PromptSequence, banks: &Banks) -> Result<Forward> {
    let d = p.d();
    let n = seq.valid_len();
    if n == 0 {
        return Err(Error::Data("cannot embed an all-pad sequence".into()));
    }
    if seq.mask[..n].iter().any(|&m| !m) {
        return Err(Error::Data(
            "valid slots must form a prefix of the sequence".into(),
        ));
    }

    let mut inputs = Vec::with_capacity(n);
    let mut x = Mat::zeros(n, d);
    for i in 0..n {
        let (input, vec) = resolve_slot(p, &seq.slots[i], banks)?;
        x.row_mut(i).copy_from_slice(&vec);
        inputs.push(input);
    }

    let mut q = Mat::zeros(n, d);
    let mut k = Mat::zeros(n, d);
    let mut v = Mat::zeros(n, d);
    for i in 0..n {
        p.attn_wq.matvec(x.row(i), q.row_mut(i));
        p.attn_wk.matvec(x.row(i), k.row_mut(i));
        p.attn_wv.matvec(x.row(i), v.row_mut(i));
    }

    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut attn = Vec::with_capacity(n);
    let mut ctx = Mat::zeros(n, d);
    for i in 0..n {
        let lim = visible(p.directionality, i, n);
        let mut scores = vec![0.0; lim];
        for (j, s) in scores.iter_mut().enumerate() {
            *s = dot(q.row(i), k.row(j)) * inv_sqrt_d;
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            sum += *s;
        }
        for s in &mut scores {
            *s /= sum;
        }
        for (j, &a) in scores.iter().enumerate() {
            axpy(ctx.row_mut(i), a, v.row(j));
        }
        attn.push(scores);
    }

    let mut pooled = vec![0.0; d];
    let mut y_i = vec![0.0; d];
    for i in 0..n {
        p.attn_wo.matvec(ctx.row(i), &mut y_i);
        for (acc, (&xi, &ai)) in pooled.iter_mut().zip(x.row(i).iter().zip(y_i.iter())) {
            *acc += xi + ai;
        }
    }
    let inv_n = 1.0 / n as f64;
    for acc in &mut pooled {
        *acc *= inv_n;
    }

    let norm = l2_norm(&pooled);
    if norm <= 1e-12 {
        return Err(Error::Numeric("pooled embedding has zero norm".into()));
    }
    let h: Vec<f64> = pooled.iter().map(|&p| p / norm).collect();
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding component".into()));
    }
    Ok(Forward {
        n,
        inputs,
        x,
        q,
        k,
        v,
        attn,
        ctx,
        norm,
        h,
    })
}

/// Embed one prompt into a unit-norm d-vector.
pub fn embed(p: &EncoderParams, seq: &PromptSequence, banks: &Banks) -> Result<Vec<f64>> {
    Ok(forward(p, seq, banks)?.h)
}

/// Embed a batch into an `n x d` matrix of unit rows. Rows are computed
/// independently (and in parallel), so row `i` always equals
/// `embed(p, &seqs[i], banks)` bit for bit.
pub fn embed_batch(p: &EncoderParams, seqs: &[PromptSequence], banks: &Banks) -> Result<Mat> {
    let d = p.d();
    let rows: Vec<Vec<f64>> = seqs
        .par_iter()
        .map(|s| embed(p, s, banks))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Mat::zeros(seqs.len(), d);
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(r);
    }
    Ok(out)
}

/// Accumulate the gradient of `sum_i upstream[i] . embed(seqs[i])` for one
/// sequence into `g`.
fn seq_backward(
    p: &EncoderParams,
    seq: &PromptSequence,
    banks: &Banks,
    upstream: &[f64],
    g: &mut GradientSet,
) -> Result<()> {
    let d = p.d();
    let f = forward(p, seq, banks)?;
    let n = f.n;
    let inv_n = 1.0 / n as f64;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    // Through the normalization: dL/dpooled = (u - h (h.u)) / norm.
    let hu = dot(&f.h, upstream);
    let dpooled: Vec<f64> = upstream
        .iter()
        .zip(f.h.iter())
        .map(|(&u, &h)| (u - h * hu) / f.norm)
        .collect();
    // Mean pool: every valid position receives dpooled / n.
    let dy: Vec<f64> = dpooled.iter().map(|&v| v * inv_n).collect();

    let mut dx = Mat::zeros(n, d);
    let mut dq = Mat::zeros(n, d);
    let mut dk = Mat::zeros(n, d);
    let mut dv = Mat::zeros(n, d);
    let mut dctx = vec![0.0; d];

    for i in 0..n {
        // Residual: y_i = x_i + Wo ctx_i, and dy_i = dy for every i.
        axpy(dx.row_mut(i), 1.0, &dy);
        g.attn_wo.add_outer(&dy, f.ctx.row(i));
        p.attn_wo.matvec_t(&dy, &mut dctx);

        let lim = visible(p.directionality, i, n);
        let alpha = &f.attn[i];
        let mut dalpha = vec![0.0; lim];
        for (j, da) in dalpha.iter_mut().enumerate() {
            *da = dot(&dctx, f.v.row(j));
            axpy(dv.row_mut(j), alpha[j], &dctx);
        }
        let weighted: f64 = alpha
            .iter()
            .zip(dalpha.iter())
            .map(|(&a, &da)| a * da)
            .sum();
        for j in 0..lim {
            let ds = alpha[j] * (dalpha[j] - weighted) * inv_sqrt_d;
            axpy(dq.row_mut(i), ds, f.k.row(j));
            axpy(dk.row_mut(j), ds, f.q.row(i));
        }
    }

    // Through the projections: z_i = W x_i for each of q, k, v.
    let mut tmp = vec![0.0; d];
    for i in 0..n {
        g.attn_wq.add_outer(dq.row(i), f.x.row(i));
        p.attn_wq.matvec_t(dq.row(i), &mut tmp);
        axpy(dx.row_mut(i), 1.0, &tmp);

        g.attn_wk.add_outer(dk.row(i), f.x.row(i));
        p.attn_wk.matvec_t(dk.row(i), &mut tmp);
        axpy(dx.row_mut(i), 1.0, &tmp);

        g.attn_wv.add_outer(dv.row(i), f.x.row(i));
        p.attn_wv.matvec_t(dv.row(i), &mut tmp);
        axpy(dx.row_mut(i), 1.0, &tmp);
    }

    // Through slot resolution. Image vectors are frozen: no gradient
    // flows into the bank, only into the projection.
    for i in 0..n {
        match &f.inputs[i] {
            SlotInput::Token(id) => axpy(g.token_table.row_mut(*id), 1.0, dx.row(i)),
            SlotInput::Image(raw) => {
                g.image_proj_w.add_outer(dx.row(i), raw);
                for (b, &v) in g.image_proj_b.data_mut().iter_mut().zip(dx.row(i)) {
                    *b += v;
                }
            }
        }
    }
    Ok(())
}

/// Sequences are processed in fixed-size chunks whose partial gradients
/// are reduced in chunk order, so the result is independent of the rayon
/// thread count.
const BACKWARD_CHUNK: usize = 16;

/// Gradient of `sum_i upstream.row(i) . embed(p, seqs[i])` with respect to
/// every encoder parameter.
pub fn backward(
    p: &EncoderParams,
    seqs: &[PromptSequence],
    banks: &Banks,
    upstream: &Mat,
) -> Result<GradientSet> {
    if upstream.rows() != seqs.len() || upstream.cols() != p.d() {
        return Err(Error::Data(format!(
            "upstream shape {}x{} does not match {} sequences of dim {}",
            upstream.rows(),
            upstream.cols(),
            seqs.len(),
            p.d()
        )));
    }
    let num_chunks = seqs.len().div_ceil(BACKWARD_CHUNK);
    let partials: Vec<GradientSet> = (0..num_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * BACKWARD_CHUNK;
            let hi = (lo + BACKWARD_CHUNK).min(seqs.len());
            let mut local = GradientSet::zeros_like(p);
            for i in lo..hi {
                seq_backward(p, &seqs[i], banks, upstream.row(i), &mut local)?;
            }
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = GradientSet::zeros_like(p);
    for part in &partials {
        total.add_assign(part);
    }
    Ok(total)
}

const CKPT_MAGIC: &[u8; 4] = b"VIXP";
pub const CKPT_VERSION: u32 = 1;

/// Serialize parameters: magic, version, `d`, `m`, vocab size, a
/// directionality byte, then each tensor row-major as little-endian f32.
/// The write is atomic (temp file + rename).
pub fn save_checkpoint(p: &EncoderParams, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(p.d() as u32).to_le_bytes());
    buf.extend_from_slice(&(p.m() as u32).to_le_bytes());
    buf.extend_from_slice(&(p.vocab_size() as u32).to_le_bytes());
    buf.push(match p.directionality {
        Directionality::Bidirectional => 0,
        Directionality::Causal => 1,
    });
    for t in p.tensors() {
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &std::path::Path) -> Result<EncoderParams> {
    let mut r = BinReader::open(path)?;
    r.expect_magic(CKPT_MAGIC, "checkpoint")?;
    let version = r.read_u32()?;
    if version != CKPT_VERSION {
        return Err(Error::format(
            path,
            0,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let d = r.read_u32()? as usize;
    let m = r.read_u32()? as usize;
    let vocab = r.read_u32()? as usize;
    let directionality = match r.read_u8()? {
        0 => Directionality::Bidirectional,
        1 => Directionality::Causal,
        x => {
            return Err(Error::format(
                path,
                0,
                format!("bad directionality byte {x}"),
            ));
        }
    };
    if d == 0 || m == 0 || vocab == 0 {
        return Err(Error::format(path, 0, "zero dimension in header"));
    }
    let mut read_mat = |rows: usize, cols: usize| -> Result<Mat> {
        let mut t = Mat::zeros(rows, cols);
        for v in t.data_mut() {
            *v = f64::from(r.read_f32()?);
        }
        Ok(t)
    };
    let token_table = read_mat(vocab, d)?;
    let image_proj_w = read_mat(d, m)?;
    let image_proj_b = read_mat(d, 1)?;
    let attn_wq = read_mat(d, d)?;
    let attn_wk = read_mat(d, d)?;
    let attn_wv = read_mat(d, d)?;
    let attn_wo = read_mat(d, d)?;
    r.expect_eof()?;
    Ok(EncoderParams {
        directionality,
        token_table,
        image_proj_w,
        image_proj_b,
        attn_wq,
        attn_wk,
        attn_wv,
        attn_wo,
    })
}
