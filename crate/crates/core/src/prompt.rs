//! Vocabulary and structured-prompt assembly.
//!
//! A prompt is a fixed-length sequence of slots: text token ids, image
//! references into a frozen bank, optional prefix phrases, and an optional
//! terminator token. Eight templates cover the plain/fused encoder layouts
//! and the prefixed/terminated decoder layouts, including the ablation
//! orderings that place images before or after the text.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{BankSide, ImageBank};
use crate::error::{Error, Result};

/// Reserved token ids.
pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const EOS: u32 = 2;
const RESERVED: usize = 3;

/// The four prefix phrases, chosen by where text and images sit in the
/// template: `*_lead` introduces the first block, `*_follow` a block that
/// comes after the other modality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrefixSet {
    pub text_lead: String,
    pub text_follow: String,
    pub image_lead: String,
    pub image_follow: String,
}

impl Default for PrefixSet {
    fn default() -> Self {
        PrefixSet {
            text_lead: "This product text".into(),
            text_follow: "and its text".into(),
            image_lead: "This product image".into(),
            image_follow: "and its image".into(),
        }
    }
}

impl PrefixSet {
    /// Prefix phrases must be single-line and tab-free so configs and
    /// TSV logs can carry them verbatim.
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("text_lead", &self.text_lead),
            ("text_follow", &self.text_follow),
            ("image_lead", &self.image_lead),
            ("image_follow", &self.image_follow),
        ] {
            if s.contains('\t') || s.contains('\n') {
                return Err(Error::Config(format!("prefix {name} contains tab/newline")));
            }
        }
        Ok(())
    }

    /// All four phrases, in a fixed order (used when seeding vocabularies).
    pub fn phrases(&self) -> [&str; 4] {
        [
            &self.text_lead,
            &self.text_follow,
            &self.image_lead,
            &self.image_follow,
        ]
    }
}

/// Token inventory: three reserved ids plus corpus tokens ranked by
/// frequency (ties broken by first occurrence), with the prefix phrases
/// pre-tokenized for assembly.
#[derive(Clone, Debug)]
pub struct Vocab {
    map: HashMap<String, u32>,
    tokens: Vec<String>,
    prefixes: PrefixSet,
    text_lead_ids: Vec<u32>,
    text_follow_ids: Vec<u32>,
    image_lead_ids: Vec<u32>,
    image_follow_ids: Vec<u32>,
}

impl Vocab {
    /// Build from a corpus. At most `max_size - 3` distinct lowercase
    /// whitespace-delimited tokens are retained next to the reserved ids.
    pub fn build<'a, I>(corpus: I, max_size: usize, prefixes: PrefixSet) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < RESERVED {
            return Err(Error::Config(format!(
                "vocab max_size {max_size} cannot hold the {RESERVED} reserved ids"
            )));
        }
        prefixes.validate()?;
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for text in corpus {
            for word in text.to_lowercase().split_whitespace() {
                let e = counts.entry(word.to_string()).or_insert((0, order));
                e.0 += 1;
                if e.0 == 1 {
                    e.1 = order;
                }
                order += 1;
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.0.cmp(&a.1.0).then(a.1.1.cmp(&b.1.1)));
        ranked.truncate(max_size - RESERVED);

        let mut tokens = vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            "<|endoftext|>".to_string(),
        ];
        let mut map = HashMap::new();
        for (word, _) in ranked {
            map.insert(word.clone(), tokens.len() as u32);
            tokens.push(word);
        }
        Ok(Self::finish(map, tokens, prefixes))
    }

    fn finish(map: HashMap<String, u32>, tokens: Vec<String>, prefixes: PrefixSet) -> Vocab {
        let mut v = Vocab {
            map,
            tokens,
            prefixes,
            text_lead_ids: Vec::new(),
            text_follow_ids: Vec::new(),
            image_lead_ids: Vec::new(),
            image_follow_ids: Vec::new(),
        };
        v.text_lead_ids = v.tokenize(&v.prefixes.text_lead.clone());
        v.text_follow_ids = v.tokenize(&v.prefixes.text_follow.clone());
        v.image_lead_ids = v.tokenize(&v.prefixes.image_lead.clone());
        v.image_follow_ids = v.tokenize(&v.prefixes.image_follow.clone());
        v
    }

    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Lowercase, split on whitespace, and map each word to its id
    /// (unknown words map to [`UNK`]). Output length always equals the
    /// whitespace-split word count.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.to_lowercase()
            .split_whitespace()
            .map(|w| self.map.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn prefixes(&self) -> &PrefixSet {
        &self.prefixes
    }

    fn prefix_ids(&self, which: PrefixKind) -> &[u32] {
        match which {
            PrefixKind::TextLead => &self.text_lead_ids,
            PrefixKind::TextFollow => &self.text_follow_ids,
            PrefixKind::ImageLead => &self.image_lead_ids,
            PrefixKind::ImageFollow => &self.image_follow_ids,
        }
    }

    /// Serialize as a small TSV: magic line, prefix phrases, then tokens
    /// in id order (reserved ids implicit).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("VIXV\t1\n");
        out.push_str(&format!("text_lead\t{}\n", self.prefixes.text_lead));
        out.push_str(&format!("text_follow\t{}\n", self.prefixes.text_follow));
        out.push_str(&format!("image_lead\t{}\n", self.prefixes.image_lead));
        out.push_str(&format!("image_follow\t{}\n", self.prefixes.image_follow));
        for (i, tok) in self.tokens.iter().enumerate().skip(RESERVED) {
            out.push_str(&format!("{i}\t{tok}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = raw.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).unwrap_or_default();
        if header != "VIXV\t1" {
            return Err(Error::format(path, 1, "expected `VIXV\\t1` header"));
        }
        let mut prefixes = PrefixSet::default();
        let mut tokens = vec![
            "<pad>".to_string(),
            "<unk>".to_string(),
            "<|endoftext|>".to_string(),
        ];
        let mut map = HashMap::new();
        for (i, line) in lines {
            let lineno = i + 1;
            let Some((key, value)) = line.split_once('\t') else {
                return Err(Error::format(path, lineno, "missing tab"));
            };
            match key {
                "text_lead" => prefixes.text_lead = value.to_string(),
                "text_follow" => prefixes.text_follow = value.to_string(),
                "image_lead" => prefixes.image_lead = value.to_string(),
                "image_follow" => prefixes.image_follow = value.to_string(),
                _ => {
                    let id: usize = key.parse().map_err(|_| {
                        Error::format(path, lineno, format!("bad token id {key:?}"))
                    })?;
                    if id != tokens.len() {
                        return Err(Error::format(
                            path,
                            lineno,
                            format!("token id {id} not dense; expected {}", tokens.len()),
                        ));
                    }
                    map.insert(value.to_string(), id as u32);
                    tokens.push(value.to_string());
                }
            }
        }
        Ok(Self::finish(map, tokens, prefixes))
    }
}

#[derive(Clone, Copy)]
enum PrefixKind {
    TextLead,
    TextFollow,
    ImageLead,
    ImageFollow,
}

/// Reference to one image vector of one item in a bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageRef {
    pub side: BankSide,
    pub item: u64,
    pub ordinal: u16,
}

/// One sequence position: a token id or an image reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Token(u32),
    Image(ImageRef),
}

/// The eight prompt templates. `E` is the item text, `V` its image
/// vectors, `EOS` the terminator; named prefixes are token phrases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    /// `E`
    EncoderPlain,
    /// `V ⊕ E`
    EncoderFused,
    /// `text_lead ⊕ E`
    PrefixText,
    /// `text_lead ⊕ E ⊕ EOS`
    DecoderText,
    /// `V ⊕ E ⊕ EOS`
    ImagesFirst,
    /// `E ⊕ V ⊕ EOS`
    TextThenImages,
    /// `image_lead ⊕ V ⊕ text_follow ⊕ E ⊕ EOS`
    ImagesFirstPrefixed,
    /// `text_lead ⊕ E ⊕ image_follow ⊕ V ⊕ EOS`
    DecoderFused,
}

impl PromptMode {
    pub const ALL: [PromptMode; 8] = [
        PromptMode::EncoderPlain,
        PromptMode::EncoderFused,
        PromptMode::PrefixText,
        PromptMode::DecoderText,
        PromptMode::ImagesFirst,
        PromptMode::TextThenImages,
        PromptMode::ImagesFirstPrefixed,
        PromptMode::DecoderFused,
    ];

    /// Whether the template can carry image slots at all.
    pub fn uses_images(self) -> bool {
        !matches!(
            self,
            PromptMode::EncoderPlain | PromptMode::PrefixText | PromptMode::DecoderText
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::EncoderPlain => "encoder-plain",
            PromptMode::EncoderFused => "encoder-fused",
            PromptMode::PrefixText => "prefix-text",
            PromptMode::DecoderText => "decoder-text",
            PromptMode::ImagesFirst => "images-first",
            PromptMode::TextThenImages => "text-then-images",
            PromptMode::ImagesFirstPrefixed => "images-first-prefixed",
            PromptMode::DecoderFused => "decoder-fused",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptMode::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompt mode {s:?}")))
    }
}

/// A fully assembled, right-padded prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSequence {
    pub slots: Vec<Slot>,
    /// `true` for content slots, `false` for padding. Valid slots always
    /// form a prefix of the sequence.
    pub mask: Vec<bool>,
    /// Position ids, `0..len` irrespective of slot kind.
    pub positions: Vec<u32>,
}

impl PromptSequence {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of non-pad slots (they form a prefix).
    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

enum Part<'a> {
    Prefix(PrefixKind),
    Text(&'a [u32]),
    Images(&'a [ImageRef]),
    Terminator,
}

fn template<'a>(mode: PromptMode, tokens: &'a [u32], images: &'a [ImageRef]) -> Vec<Part<'a>> {
    use Part::*;
    let with_images = !images.is_empty();
    match (mode, with_images) {
        (PromptMode::EncoderPlain, _) => vec![Text(tokens)],
        (PromptMode::EncoderFused, true) => vec![Images(images), Text(tokens)],
        (PromptMode::EncoderFused, false) => vec![Text(tokens)],
        (PromptMode::PrefixText, _) => vec![Prefix(PrefixKind::TextLead), Text(tokens)],
        (PromptMode::DecoderText, _) => {
            vec![Prefix(PrefixKind::TextLead), Text(tokens), Terminator]
        }
        (PromptMode::ImagesFirst, true) => vec![Images(images), Text(tokens), Terminator],
        (PromptMode::ImagesFirst, false) => vec![Text(tokens), Terminator],
        (PromptMode::TextThenImages, true) => vec![Text(tokens), Images(images), Terminator],
        (PromptMode::TextThenImages, false) => vec![Text(tokens), Terminator],
        (PromptMode::ImagesFirstPrefixed, true) => vec![
            Prefix(PrefixKind::ImageLead),
            Images(images),
            Prefix(PrefixKind::TextFollow),
            Text(tokens),
            Terminator,
        ],
        (PromptMode::ImagesFirstPrefixed, false) => {
            vec![Prefix(PrefixKind::TextFollow), Text(tokens), Terminator]
        }
        (PromptMode::DecoderFused, true) => vec![
            Prefix(PrefixKind::TextLead),
            Text(tokens),
            Prefix(PrefixKind::ImageFollow),
            Images(images),
            Terminator,
        ],
        (PromptMode::DecoderFused, false) => {
            vec![Prefix(PrefixKind::TextLead), Text(tokens), Terminator]
        }
    }
}

/// Assemble one prompt. Fixed parts (prefixes, images, terminator) must
/// fit inside `max_len`; the text block is truncated from the right to
/// make room, and the result is right-padded to exactly `max_len` slots.
/// When `images` is empty, image blocks and their prefix are omitted.
pub fn assemble(
    tokens: &[u32],
    images: &[ImageRef],
    mode: PromptMode,
    max_len: usize,
    vocab: &Vocab,
) -> Result<PromptSequence> {
    let parts = template(mode, tokens, images);
    let fixed: usize = parts
        .iter()
        .map(|p| match p {
            Part::Prefix(k) => vocab.prefix_ids(*k).len(),
            Part::Text(_) => 0,
            Part::Images(v) => v.len(),
            Part::Terminator => 1,
        })
        .sum();
    if fixed > max_len {
        return Err(Error::Config(format!(
            "max_len {max_len} too small for mode {mode}: fixed parts need {fixed} slots"
        )));
    }
    let budget = max_len - fixed;

    let mut slots = Vec::with_capacity(max_len);
    for part in &parts {
        match part {
            Part::Prefix(k) => slots.extend(vocab.prefix_ids(*k).iter().map(|&t| Slot::Token(t))),
            Part::Text(toks) => {
                let keep = toks.len().min(budget);
                slots.extend(toks[..keep].iter().map(|&t| Slot::Token(t)));
            }
            Part::Images(refs) => slots.extend(refs.iter().map(|&r| Slot::Image(r))),
            Part::Terminator => slots.push(Slot::Token(EOS)),
        }
    }
    let valid = slots.len();
    debug_assert!(valid <= max_len);
    slots.resize(max_len, Slot::Token(PAD));

    let mut mask = vec![true; valid];
    mask.resize(max_len, false);
    let positions = (0..max_len as u32).collect();
    Ok(PromptSequence {
        slots,
        mask,
        positions,
    })
}

/// Assemble prompts for a batch of `(item_index, text)` pairs, pulling up
/// to `image_cap` images per item from `bank` when present.
pub fn assemble_batch(
    items: &[(u64, &str)],
    side: BankSide,
    bank: Option<&ImageBank>,
    mode: PromptMode,
    max_len: usize,
    image_cap: usize,
    vocab: &Vocab,
) -> Result<Vec<PromptSequence>> {
    let mut out = Vec::with_capacity(items.len());
    for &(item, text) in items {
        let tokens = vocab.tokenize(text);
        let refs: Vec<ImageRef> = if mode.uses_images() {
            match bank {
                Some(b) => {
                    let available = b.images(item).map_or(0, <[Vec<f64>]>::len);
                    let n = available.min(image_cap);
                    (0..n)
                        .map(|i| ImageRef {
                            side,
                            item,
                            ordinal: i as u16,
                        })
                        .collect()
                }
                None => Vec::new(),
            }
        } else {
            Vec::new()
        };
        out.push(assemble(&tokens, &refs, mode, max_len, vocab)?);
    }
    Ok(out)
}

/// Human-readable slot listing used by golden tests: one line per slot,
/// tab-separated `kind  id-or-ref  position  mask`.
pub fn render_slots(seq: &PromptSequence) -> String {
    let mut out = String::new();
    for i in 0..seq.len() {
        let mask = if seq.mask[i] { "valid" } else { "pad" };
        match seq.slots[i] {
            Slot::Token(t) => out.push_str(&format!("token\t{t}\t{}\t{mask}\n", seq.positions[i])),
            Slot::Image(r) => {
                let side = match r.side {
                    BankSide::Query => 'q',
                    BankSide::Label => 'l',
                };
                out.push_str(&format!(
                    "image\t{side}:{}:{}\t{}\t{mask}\n",
                    r.item, r.ordinal, seq.positions[i]
                ));
            }
        }
    }
    out
}
