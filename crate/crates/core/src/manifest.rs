//! Run provenance records.
//!
//! Every subcommand that produces an output directory writes a
//! `run_manifest.txt` beside its outputs: the subcommand, the fully
//! resolved configuration, the seed, input/output paths, tool and file
//! format versions, and wall time. The manifest is written atomically so
//! a crash never leaves a half-written record.

use std::path::Path;

use crate::bytes::write_atomic;
use crate::config::parse_key_values;
use crate::corpus::BANK_VERSION;
use crate::encoder::CKPT_VERSION;
use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "run_manifest.txt";

/// One-line-per-fact description of a run. Rendered as the same flat
/// `key=value` format the config loader reads, so manifests can be
/// diffed and replayed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    /// Fully resolved configuration (after file + flag merging).
    pub config: Vec<(String, String)>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("subcommand={}\n", self.subcommand));
        s.push_str(&format!("tool_version={TOOL_VERSION}\n"));
        s.push_str(&format!("checkpoint_format={CKPT_VERSION}\n"));
        s.push_str(&format!("image_bank_format={BANK_VERSION}\n"));
        s.push_str(&format!("seed={}\n", self.seed));
        for (i, p) in self.inputs.iter().enumerate() {
            s.push_str(&format!("input_{i}={p}\n"));
        }
        for (i, p) in self.outputs.iter().enumerate() {
            s.push_str(&format!("output_{i}={p}\n"));
        }
        for (k, v) in &self.config {
            s.push_str(&format!("cfg.{k}={v}\n"));
        }
        s.push_str(&format!("wall_seconds={:.3}\n", self.wall_seconds));
        s
    }

    /// Atomically write `run_manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), self.render().as_bytes())
    }

    /// Companion manifest for a single-file output, written next to it as
    /// `<name>.manifest.txt`.
    pub fn write_for_file(&self, out_file: &Path) -> Result<()> {
        let name = out_file
            .file_name()
            .ok_or_else(|| {
                crate::error::Error::Data(format!(
                    "cannot derive manifest path for {}: no file name",
                    out_file.display()
                ))
            })?
            .to_string_lossy();
        write_atomic(
            &out_file.with_file_name(format!("{name}.manifest.txt")),
            self.render().as_bytes(),
        )
    }
}

/// Parse a rendered manifest back into key/value pairs (round-trip checks
/// and tooling; the manifest is not otherwise consumed programmatically).
pub fn parse_manifest(text: &str) -> Result<Vec<(String, String)>> {
    parse_key_values(text, Path::new(MANIFEST_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_renders_and_round_trips() {
        let m = RunManifest {
            subcommand: "train".into(),
            seed: 42,
            config: vec![("epochs".into(), "10".into()), ("d".into(), "32".into())],
            inputs: vec!["data/train".into()],
            outputs: vec!["runs/a".into()],
            wall_seconds: 1.25,
        };
        let text = m.render();
        assert!(text.starts_with("subcommand=train\n"));
        assert!(text.contains("cfg.epochs=10\n"));
        assert!(text.contains("input_0=data/train\n"));
        assert!(text.ends_with("wall_seconds=1.250\n"));
        let pairs = parse_manifest(&text).unwrap();
        assert_eq!(pairs.iter().filter(|(k, _)| k == "cfg.d").count(), 1);
    }

    #[test]
    fn manifest_writes_atomically_into_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            subcommand: "gen-synth".into(),
            ..RunManifest::default()
        };
        m.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(text.contains("subcommand=gen-synth"));
        assert!(text.contains(&format!("tool_version={TOOL_VERSION}")));
    }

    #[test]
    fn file_outputs_get_a_sibling_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("preds.tsv");
        let m = RunManifest {
            subcommand: "predict".into(),
            ..RunManifest::default()
        };
        m.write_for_file(&out).unwrap();
        let text = std::fs::read_to_string(dir.path().join("preds.tsv.manifest.txt")).unwrap();
        assert!(text.contains("subcommand=predict"));
    }
}
