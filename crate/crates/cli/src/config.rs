//! Experiment configuration: a flat `key = value` file with dotted sections.

use std::fmt;
use std::str::FromStr;

use embverify::dataset::{BinaryLabel, Format};
use embverify::kv::{fmt_float, join_floats, KvDocument};
use embverify::network::TrainConfig;
use embverify::robust::{AttackConfig, EpsilonMode};
use embverify::synth::SynthSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Plain,
    Small,
    Cluster(usize),
    /// Smallest cluster count whose boxes exclude every negative.
    ClusterAuto,
}

/// One region construction, e.g. `rotated-cluster:auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub rotated: bool,
    pub kind: VariantKind,
}

impl Variant {
    /// File-name friendly form.
    pub fn stem(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rotated {
            f.write_str("rotated-")?;
        }
        match self.kind {
            VariantKind::Plain => f.write_str("plain"),
            VariantKind::Small => f.write_str("small"),
            VariantKind::Cluster(k) => write!(f, "cluster:{k}"),
            VariantKind::ClusterAuto => f.write_str("cluster:auto"),
        }
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (rotated, rest) = match s.strip_prefix("rotated-") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let kind = match rest {
            "plain" => VariantKind::Plain,
            "small" => VariantKind::Small,
            "cluster:auto" => VariantKind::ClusterAuto,
            other => match other.strip_prefix("cluster:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => VariantKind::Cluster(k),
                _ => return Err(format!("unknown region variant {s:?}")),
            },
        };
        Ok(Variant { rotated, kind })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatChoice {
    Auto,
    Fixed(Format),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset_path: Option<String>,
    pub dataset_format: FormatChoice,
    pub synth: SynthSpec,
    pub variants: Vec<Variant>,
    /// Region set feeding augmentation and the adversary.
    pub region_use: Option<Variant>,
    pub k_max: usize,
    pub include_ambiguous: bool,
    pub layers: usize,
    pub train: TrainConfig,
    pub probe: bool,
    pub probe_epochs: usize,
    pub augment_positive: usize,
    pub augment_negative: usize,
    pub attack_enabled: bool,
    pub attack_samples: usize,
    pub attack: AttackConfig,
    pub target: BinaryLabel,
    pub eps_grid: Vec<f64>,
    pub eps_max: f64,
    pub eps_tolerance: f64,
    /// Cap on ε-search points; 0 means all.
    pub max_points: usize,
    pub restarts: usize,
    pub falsify_steps: usize,
    pub box_budget_secs: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            dataset_path: None,
            dataset_format: FormatChoice::Auto,
            synth: SynthSpec::default(),
            variants: ["plain", "small", "cluster:auto", "rotated-plain", "rotated-small", "rotated-cluster:auto"]
                .iter()
                .map(|v| v.parse().unwrap())
                .collect(),
            region_use: None,
            k_max: 200,
            include_ambiguous: false,
            layers: 3,
            train,
            probe: true,
            probe_epochs: 50,
            augment_positive: 0,
            augment_negative: 0,
            attack_enabled: false,
            attack_samples: 500,
            attack: AttackConfig::default(),
            target: BinaryLabel::Positive,
            eps_grid: vec![1e-5, 1e-4, 1e-3],
            eps_max: 0.1,
            eps_tolerance: 1e-7,
            max_points: 0,
            restarts: 10,
            falsify_steps: 20,
            box_budget_secs: 60.0,
        }
    }
}

/// Every key the configuration understands, in canonical order.
pub const KEYS: &[&str] = &[
    "seed",
    "dataset.path",
    "dataset.format",
    "synth.dim",
    "synth.n_positive",
    "synth.n_negative",
    "synth.n_ambiguous",
    "synth.separation",
    "synth.sigma",
    "synth.anisotropy",
    "synth.label_noise",
    "synth.test_fraction",
    "regions.variants",
    "regions.use",
    "regions.k_max",
    "regions.include_ambiguous",
    "network.layers",
    "network.epochs",
    "network.batch_size",
    "network.learning_rate",
    "train.alpha",
    "train.beta",
    "train.probe",
    "train.probe_epochs",
    "augment.n_positive",
    "augment.n_negative",
    "attack.enabled",
    "attack.samples",
    "attack.steps",
    "attack.epsilon",
    "attack.step_scale",
    "verify.target",
    "verify.eps_grid",
    "verify.eps_max",
    "verify.eps_tolerance",
    "verify.max_points",
    "verify.restarts",
    "verify.falsify_steps",
    "verify.box_budget_secs",
];

fn parse<T: FromStr>(doc: &KvDocument, key: &str, default: T) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    doc.parse_or(key, default).map_err(CliError::input)
}

fn parse_list<T: FromStr>(doc: &KvDocument, key: &str) -> CliResult<Option<Vec<T>>>
where
    T::Err: fmt::Display,
{
    doc.get(key)
        .map(|raw| {
            raw.split_whitespace()
                .map(|tok| tok.parse::<T>().map_err(|e| CliError::config(key, e)))
                .collect()
        })
        .transpose()
}

impl ExperimentConfig {
    pub fn from_document(doc: &KvDocument) -> CliResult<Self> {
        if let Some(unknown) = doc.keys().find(|k| !KEYS.contains(k)) {
            return Err(CliError::config(unknown, "unknown key"));
        }
        let d = Self::default();
        let dataset_format = match doc.get("dataset.format").unwrap_or("auto") {
            "auto" => FormatChoice::Auto,
            other => FormatChoice::Fixed(
                other.parse::<Format>().map_err(|e| CliError::config("dataset.format", e))?,
            ),
        };
        let region_use = match doc.get("regions.use") {
            None | Some("none") => None,
            Some(v) => Some(v.parse::<Variant>().map_err(|e| CliError::config("regions.use", e))?),
        };
        let seed = parse(doc, "seed", d.seed)?;
        let synth = SynthSpec {
            dim: parse(doc, "synth.dim", d.synth.dim)?,
            n_positive: parse(doc, "synth.n_positive", d.synth.n_positive)?,
            n_negative: parse(doc, "synth.n_negative", d.synth.n_negative)?,
            n_ambiguous: parse(doc, "synth.n_ambiguous", d.synth.n_ambiguous)?,
            separation: parse(doc, "synth.separation", d.synth.separation)?,
            sigma: parse(doc, "synth.sigma", d.synth.sigma)?,
            anisotropy: parse(doc, "synth.anisotropy", d.synth.anisotropy)?,
            label_noise: parse(doc, "synth.label_noise", d.synth.label_noise)?,
            test_fraction: parse(doc, "synth.test_fraction", d.synth.test_fraction)?,
            seed,
        };
        let train = TrainConfig {
            epochs: parse(doc, "network.epochs", d.train.epochs)?,
            batch_size: parse(doc, "network.batch_size", d.train.batch_size)?,
            learning_rate: parse(doc, "network.learning_rate", d.train.learning_rate)?,
            seed,
            alpha: parse(doc, "train.alpha", d.train.alpha)?,
            beta: parse(doc, "train.beta", d.train.beta)?,
        };
        let attack = AttackConfig {
            steps: parse(doc, "attack.steps", d.attack.steps)?,
            epsilon: parse::<EpsilonMode>(doc, "attack.epsilon", d.attack.epsilon)?,
            step_scale: parse(doc, "attack.step_scale", d.attack.step_scale)?,
        };
        let config = Self {
            seed,
            dataset_path: doc.get("dataset.path").filter(|p| !p.is_empty()).map(String::from),
            dataset_format,
            synth,
            variants: parse_list(doc, "regions.variants")?.unwrap_or(d.variants),
            region_use,
            k_max: parse(doc, "regions.k_max", d.k_max)?,
            include_ambiguous: parse(doc, "regions.include_ambiguous", d.include_ambiguous)?,
            layers: parse(doc, "network.layers", d.layers)?,
            train,
            probe: parse(doc, "train.probe", d.probe)?,
            probe_epochs: parse(doc, "train.probe_epochs", d.probe_epochs)?,
            augment_positive: parse(doc, "augment.n_positive", d.augment_positive)?,
            augment_negative: parse(doc, "augment.n_negative", d.augment_negative)?,
            attack_enabled: parse(doc, "attack.enabled", d.attack_enabled)?,
            attack_samples: parse(doc, "attack.samples", d.attack_samples)?,
            attack,
            target: parse(doc, "verify.target", d.target)?,
            eps_grid: parse_list(doc, "verify.eps_grid")?.unwrap_or(d.eps_grid),
            eps_max: parse(doc, "verify.eps_max", d.eps_max)?,
            eps_tolerance: parse(doc, "verify.eps_tolerance", d.eps_tolerance)?,
            max_points: parse(doc, "verify.max_points", d.max_points)?,
            restarts: parse(doc, "verify.restarts", d.restarts)?,
            falsify_steps: parse(doc, "verify.falsify_steps", d.falsify_steps)?,
            box_budget_secs: parse(doc, "verify.box_budget_secs", d.box_budget_secs)?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        Self::from_document(&KvDocument::parse(text).map_err(CliError::input)?)
    }

    /// Range checks that do not touch the file system.
    pub fn validate(&self) -> CliResult<()> {
        let check = |key: &str, ok: bool, msg: &str| if ok { Ok(()) } else { Err(CliError::config(key, msg)) };
        self.train.validate().map_err(|e| CliError::config("network", e))?;
        self.attack.validate().map_err(|e| CliError::config("attack", e))?;
        self.synth.validate().map_err(|e| CliError::config("synth", e))?;
        check("train.probe_epochs", self.probe_epochs >= 1, "must be at least 1")?;
        check("regions.k_max", self.k_max >= 1, "must be at least 1")?;
        check("network.layers", self.layers >= 3, "must be at least 3")?;
        check(
            "verify.eps_grid",
            self.eps_grid.iter().all(|e| *e > 0.0 && e.is_finite()),
            "radii must be positive",
        )?;
        check(
            "verify.eps_max",
            self.eps_tolerance > 0.0 && self.eps_max > self.eps_tolerance && self.eps_max.is_finite(),
            "need eps_max > eps_tolerance > 0",
        )?;
        check("verify.box_budget_secs", self.box_budget_secs > 0.0, "must be positive")?;
        check("verify.falsify_steps", self.falsify_steps >= 1, "must be at least 1")?;
        check("regions.variants", !self.variants.is_empty(), "needs at least one variant")?;
        if let Some(v) = &self.region_use {
            check("regions.use", self.variants.contains(v), "must be one of regions.variants")?;
        }
        check(
            "regions.use",
            self.region_use.is_some() || !(self.attack_enabled || self.augment_positive + self.augment_negative > 0),
            "augmentation and adversarial training need a region set",
        )?;
        Ok(())
    }

    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("seed", self.seed);
        doc.set("dataset.path", self.dataset_path.as_deref().unwrap_or(""));
        doc.set(
            "dataset.format",
            match self.dataset_format {
                FormatChoice::Auto => "auto".to_string(),
                FormatChoice::Fixed(f) => f.to_string(),
            },
        );
        let s = &self.synth;
        doc.set("synth.dim", s.dim);
        doc.set("synth.n_positive", s.n_positive);
        doc.set("synth.n_negative", s.n_negative);
        doc.set("synth.n_ambiguous", s.n_ambiguous);
        doc.set("synth.separation", fmt_float(s.separation));
        doc.set("synth.sigma", fmt_float(s.sigma));
        doc.set("synth.anisotropy", fmt_float(s.anisotropy));
        doc.set("synth.label_noise", fmt_float(s.label_noise));
        doc.set("synth.test_fraction", fmt_float(s.test_fraction));
        let variants: Vec<String> = self.variants.iter().map(|v| v.to_string()).collect();
        doc.set("regions.variants", variants.join(" "));
        doc.set("regions.use", self.region_use.map_or("none".to_string(), |v| v.to_string()));
        doc.set("regions.k_max", self.k_max);
        doc.set("regions.include_ambiguous", self.include_ambiguous);
        doc.set("network.layers", self.layers);
        doc.set("network.epochs", self.train.epochs);
        doc.set("network.batch_size", self.train.batch_size);
        doc.set("network.learning_rate", fmt_float(self.train.learning_rate));
        doc.set("train.alpha", fmt_float(self.train.alpha));
        doc.set("train.beta", fmt_float(self.train.beta));
        doc.set("train.probe", self.probe);
        doc.set("train.probe_epochs", self.probe_epochs);
        doc.set("augment.n_positive", self.augment_positive);
        doc.set("augment.n_negative", self.augment_negative);
        doc.set("attack.enabled", self.attack_enabled);
        doc.set("attack.samples", self.attack_samples);
        doc.set("attack.steps", self.attack.steps);
        doc.set("attack.epsilon", self.attack.epsilon);
        doc.set("attack.step_scale", fmt_float(self.attack.step_scale));
        doc.set("verify.target", self.target.as_str());
        doc.set("verify.eps_grid", join_floats(&self.eps_grid));
        doc.set("verify.eps_max", fmt_float(self.eps_max));
        doc.set("verify.eps_tolerance", fmt_float(self.eps_tolerance));
        doc.set("verify.max_points", self.max_points);
        doc.set("verify.restarts", self.restarts);
        doc.set("verify.falsify_steps", self.falsify_steps);
        doc.set("verify.box_budget_secs", fmt_float(self.box_budget_secs));
        doc
    }

    /// Canonical text of the entries whose key starts with one of `prefixes`.
    pub fn section_text(&self, prefixes: &[&str]) -> String {
        let doc = self.to_document();
        doc.keys()
            .filter(|k| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|k| format!("{k} = {}\n", doc.get(k).unwrap_or_default()))
            .collect()
    }
}
