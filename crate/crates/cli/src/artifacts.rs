//! Output layout, content hashes and provenance checks.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Configuration hashes per pipeline stage. Each stage hash covers the
/// dataset, the keys the stage reads and the hash of the stage before it,
/// so changing verification settings does not invalidate a trained network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stages {
    pub dataset: String,
    pub regions: String,
    pub train: String,
    pub verify: String,
}

impl Stages {
    pub fn compute(config: &ExperimentConfig, dataset_bytes: &[u8], strict_fp: bool) -> Self {
        let dataset = sha256_hex(dataset_bytes);
        let regions = sha256_hex(
            format!(
                "regions\n{dataset}\nseed = {}\n{}",
                config.seed,
                config.section_text(&["dataset.format", "regions."])
            )
            .as_bytes(),
        );
        let train = sha256_hex(
            format!(
                "train\n{regions}\n{}",
                config.section_text(&["network.", "train.", "augment.", "attack."])
            )
            .as_bytes(),
        );
        let verify = sha256_hex(
            format!("verify\n{train}\nstrict_fp = {strict_fp}\n{}", config.section_text(&["verify."])).as_bytes(),
        );
        Self {
            dataset,
            regions,
            train,
            verify,
        }
    }
}

/// First line of every text artifact.
pub fn provenance_line(stage: &str, hash: &str) -> String {
    format!("# provenance {stage} {hash}\n")
}

fn read_provenance(text: &str) -> Option<(&str, &str)> {
    let mut parts = text.lines().next()?.strip_prefix("# provenance ")?.split_whitespace();
    Some((parts.next()?, parts.next()?))
}

/// Refuses an artifact produced under a different configuration unless
/// `force` is set.
pub fn check_hash(path: &Path, found: Option<&str>, expected: &str, force: bool) -> CliResult<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        _ if force => Ok(()),
        Some(h) => Err(CliError::Validation(format!(
            "{} was produced by a different configuration (hash {h}, expected {expected}); rerun the stage or pass --force",
            path.display()
        ))),
        None => Err(CliError::Validation(format!("{} has no provenance hash", path.display()))),
    }
}

pub fn check_text(path: &Path, text: &str, stage: &str, expected: &str, force: bool) -> CliResult<()> {
    let found = read_provenance(text).filter(|(s, _)| *s == stage).map(|(_, h)| h);
    check_hash(path, found, expected, force)
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// File names inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn region(&self, v: &Variant) -> PathBuf {
        self.root.join("regions").join(format!("{}.region", v.stem()))
    }

    pub fn containment_table(&self) -> PathBuf {
        self.root.join("containment.txt")
    }

    pub fn containment_tsv(&self) -> PathBuf {
        self.root.join("containment.tsv")
    }

    pub fn network(&self) -> PathBuf {
        self.root.join("network.mlp")
    }

    pub fn train_metrics(&self) -> PathBuf {
        self.root.join("train_metrics.tsv")
    }

    pub fn train_report(&self) -> PathBuf {
        self.root.join("train_report.txt")
    }

    pub fn verify_report(&self) -> PathBuf {
        self.root.join("verify_report.txt")
    }

    pub fn verify_regions(&self) -> PathBuf {
        self.root.join("verify_regions.tsv")
    }

    pub fn verify_eps(&self) -> PathBuf {
        self.root.join("verify_eps.tsv")
    }

    pub fn counterexamples(&self) -> PathBuf {
        self.root.join("counterexamples.tsv")
    }

    /// Wall-clock times; excluded from the summary hashes.
    pub fn verify_timings(&self) -> PathBuf {
        self.root.join("verify_timings.tsv")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn failure_marker(&self) -> PathBuf {
        self.root.join("FAILED")
    }

    /// Path relative to the output directory, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_hashes_chain() {
        let a = ExperimentConfig::default();
        let base = Stages::compute(&a, b"data", false);
        let verify_only = ExperimentConfig { eps_max: 0.5, ..a.clone() };
        let s = Stages::compute(&verify_only, b"data", false);
        assert_eq!((&s.regions, &s.train), (&base.regions, &base.train));
        assert_ne!(s.verify, base.verify);
        let mut train_change = a.clone();
        train_change.train.epochs = 7;
        let s = Stages::compute(&train_change, b"data", false);
        assert_eq!(s.regions, base.regions);
        assert_ne!(s.train, base.train);
        assert_ne!(Stages::compute(&a, b"other", false).regions, base.regions);
        assert_ne!(Stages::compute(&a, b"data", true).verify, base.verify);
    }

    #[test]
    fn provenance_checks() {
        let text = format!("{}rest\n", provenance_line("train", "abc"));
        let p = Path::new("x");
        assert!(check_text(p, &text, "train", "abc", false).is_ok());
        assert!(check_text(p, &text, "train", "abd", false).is_err());
        assert!(check_text(p, &text, "train", "abd", true).is_ok());
        assert!(check_text(p, &text, "verify", "abc", false).is_err());
    }
}
