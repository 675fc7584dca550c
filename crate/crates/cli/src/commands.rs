//! The pipeline stages behind each subcommand.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use embverify::dataset::{BinaryLabel, EmbeddingDataset, Format, Label, Split};
use embverify::geometry::{
    bounding_box, cluster_hypercubes, containment_report, fit_rotation, log_volume, log_volume_eps_ball,
    search_min_k, shrink_to_exclude, Hyperrectangle, RegionKind, RegionSet, RotationTransform,
};
use embverify::kv::{fmt_float, KvDocument};
use embverify::network::{
    classifier_spec, evaluate, linear_probe, train, AdversarySource, Evaluation, MlpNetwork, ProbeMode, TrainConfig,
    TrainingSet,
};
use embverify::robust::{augment, make_adversary, AttackConfig, AugmentConfig, EpsilonMode};
use embverify::verify::{
    certified_margin, epsilon_search_many, verify_region_set, IntervalVector, Status, VerifyOptions,
};
use embverify::{synth, Exec};

use crate::artifacts::{check_hash, check_text, provenance_line, read_text, sha256_hex, write_text, Layout, Stages};
use crate::config::{ExperimentConfig, FormatChoice, Variant, VariantKind};
use crate::error::{CliError, CliResult};

/// Everything a command needs besides its own arguments.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    /// Directory relative dataset paths are resolved against.
    pub config_dir: PathBuf,
    pub layout: Layout,
    pub exec: Exec,
    pub strict_fp: bool,
    pub force: bool,
}

/// The loaded dataset and the stage hashes derived from it.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub dataset: EmbeddingDataset,
    pub stages: Stages,
}

fn resolve_format(path: &Path, choice: FormatChoice) -> Format {
    match choice {
        FormatChoice::Auto => Format::from_path(path),
        FormatChoice::Fixed(f) => f,
    }
}

/// Reads and parses a dataset file, returning it with its raw bytes.
pub fn load_dataset(path: &Path, choice: FormatChoice) -> CliResult<(EmbeddingDataset, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let parsed = match resolve_format(path, choice) {
        Format::Binary => EmbeddingDataset::from_bytes(&bytes),
        Format::Csv => match std::str::from_utf8(&bytes) {
            Ok(text) => EmbeddingDataset::from_csv(text),
            Err(e) => return Err(CliError::Validation(format!("{}: not UTF-8 text: {e}", path.display()))),
        },
    };
    let dataset = parsed.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if dataset.is_empty() {
        return Err(CliError::Validation(format!("{}: dataset has no records", path.display())));
    }
    Ok((dataset, bytes))
}

impl Context {
    pub fn dataset_path(&self) -> CliResult<PathBuf> {
        let raw = self
            .config
            .dataset_path
            .as_deref()
            .ok_or_else(|| CliError::config("dataset.path", "missing"))?;
        Ok(self.config_dir.join(raw))
    }

    /// Loads the dataset. Every failure here is a validation error and
    /// happens before any artifact is written.
    pub fn load_inputs(&self) -> CliResult<Inputs> {
        let path = self.dataset_path()?;
        if !path.is_file() {
            return Err(CliError::config("dataset.path", format!("{} does not exist", path.display())));
        }
        let (dataset, bytes) = load_dataset(&path, self.config.dataset_format)?;
        Ok(Inputs {
            dataset,
            stages: Stages::compute(&self.config, &bytes, self.strict_fp),
        })
    }

    fn load_region(&self, variant: &Variant, stages: &Stages) -> CliResult<RegionSet> {
        let path = self.layout.region(variant);
        let doc = KvDocument::parse(&read_text(&path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        check_hash(&path, doc.get("provenance.hash"), &stages.regions, self.force)?;
        RegionSet::from_document(&doc).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    fn load_network(&self, stages: &Stages) -> CliResult<MlpNetwork> {
        let path = self.layout.network();
        let doc = KvDocument::parse(&read_text(&path)?)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        check_hash(&path, doc.get("provenance.hash"), &stages.train, self.force)?;
        MlpNetwork::from_document(&doc).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn accuracy_cell(e: &Evaluation) -> String {
    if e.total == 0 {
        "n/a".into()
    } else {
        format!("{} ({}/{})", pct(e.accuracy), e.correct, e.total)
    }
}

// ---------------------------------------------------------------- synth

pub fn cmd_synth(ctx: &Context) -> CliResult<String> {
    let path = ctx.dataset_path()?;
    let dataset = synth::generate(&ctx.config.synth).map_err(|e| CliError::config("synth", e))?;
    let format = resolve_format(&path, ctx.config.dataset_format);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    dataset.save(&path, format)?;
    Ok(format!(
        "wrote {} records of dimension {} to {} ({format})\n",
        dataset.len(),
        dataset.dim(),
        path.display()
    ))
}

// ---------------------------------------------------------------- ingest-check

pub fn cmd_ingest_check(path: &Path, format: FormatChoice) -> CliResult<String> {
    let (dataset, bytes) = load_dataset(path, format)?;
    let mut out = format!(
        "OK, {} records, dim {}\n{} sha256 {}\n",
        dataset.len(),
        dataset.dim(),
        path.display(),
        sha256_hex(&bytes)
    );
    let _ = writeln!(out, "{:<6} {:>9} {:>9} {:>9}", "split", "Positive", "Negative", "Ambiguous");
    for split in [Split::Train, Split::Test] {
        let _ = writeln!(
            out,
            "{:<6} {:>9} {:>9} {:>9}",
            split.as_str(),
            dataset.count(split, Label::Positive),
            dataset.count(split, Label::Negative),
            dataset.count(split, Label::Ambiguous)
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------- regions

#[derive(Debug, Clone)]
pub struct BuiltRegion {
    pub variant: Variant,
    /// Row name in reports; automatic cluster searches show the chosen k.
    pub name: String,
    pub set: RegionSet,
}

#[derive(Debug, Clone)]
pub struct RegionsOutput {
    pub regions: Vec<BuiltRegion>,
    pub files: Vec<PathBuf>,
    pub text: String,
}

fn build_region(
    variant: Variant,
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    rotation: Option<&RotationTransform>,
    config: &ExperimentConfig,
    exec: Exec,
) -> CliResult<BuiltRegion> {
    let to_region = |x: &Vec<f64>| rotation.map_or_else(|| x.clone(), |r| r.to_rotated(x));
    let mut name = variant.to_string();
    let set = match variant.kind {
        VariantKind::Plain | VariantKind::Small => {
            let z_pos: Vec<Vec<f64>> = exec.map(positives, to_region);
            let bbox = bounding_box(&z_pos)?;
            let (b, kind) = if variant.kind == VariantKind::Small {
                let z_neg: Vec<Vec<f64>> = exec.map(negatives, to_region);
                (shrink_to_exclude(&bbox, &z_pos, &z_neg)?, RegionKind::Small)
            } else {
                (bbox, RegionKind::Plain)
            };
            RegionSet::new(rotation.cloned(), vec![b], kind)?
        }
        VariantKind::Cluster(k) => cluster_hypercubes(positives, negatives, k, config.seed, rotation, exec)?.regions,
        VariantKind::ClusterAuto => {
            let found = search_min_k(positives, negatives, config.k_max, config.seed, rotation, exec)?;
            name = format!("{name} (k={})", found.k);
            found.boxes.regions
        }
    };
    Ok(BuiltRegion { variant, name, set })
}

pub fn run_regions(ctx: &Context, inputs: &Inputs) -> CliResult<RegionsOutput> {
    let ds = &inputs.dataset;
    let config = &ctx.config;
    let mut positives = ds.partition(Split::Train, Label::Positive);
    if config.include_ambiguous {
        positives.extend(ds.partition(Split::Train, Label::Ambiguous));
    }
    let negatives = ds.partition(Split::Train, Label::Negative);
    if positives.is_empty() {
        return Err(CliError::Validation("the training split has no positive records".into()));
    }
    let rotation = if config.variants.iter().any(|v| v.rotated) {
        Some(fit_rotation(&positives)?)
    } else {
        None
    };

    let mut regions = Vec::new();
    for &variant in &config.variants {
        let rot = if variant.rotated { rotation.as_ref() } else { None };
        regions.push(build_region(variant, &positives, &negatives, rot, config, ctx.exec)?);
    }

    let hash = &inputs.stages.regions;
    let mut files = Vec::new();
    for r in &regions {
        let mut doc = r.set.to_document();
        doc.set("variant", r.variant);
        doc.set("provenance.stage", "regions");
        doc.set("provenance.hash", hash);
        let path = ctx.layout.region(&r.variant);
        write_text(&path, &doc.to_text(&format!("region set {}", r.name)))?;
        files.push(path);
    }

    let named: Vec<(String, RegionSet)> = regions.iter().map(|r| (r.name.clone(), r.set.clone())).collect();
    let report = containment_report(&named, ds, ctx.exec)?;
    let text = format!(
        "{}# containment (%) of regions built from {} train positives and {} train negatives\n{}",
        provenance_line("regions", hash),
        positives.len(),
        negatives.len(),
        report.to_table()
    );
    write_text(&ctx.layout.containment_table(), &text)?;
    write_text(
        &ctx.layout.containment_tsv(),
        &format!("{}{}", provenance_line("regions", hash), report.to_tsv()),
    )?;
    files.push(ctx.layout.containment_table());
    files.push(ctx.layout.containment_tsv());
    Ok(RegionsOutput { regions, files, text })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub test: Evaluation,
    /// `(all-data, train/test)` probe accuracies.
    pub probe: Option<(f64, f64)>,
    pub files: Vec<PathBuf>,
    pub text: String,
}

pub fn run_train(ctx: &Context, inputs: &Inputs) -> CliResult<TrainOutput> {
    let ds = &inputs.dataset;
    let config = &ctx.config;
    let region = match &config.region_use {
        Some(v) => Some((v, ctx.load_region(v, &inputs.stages)?)),
        None => None,
    };

    let mut data = TrainingSet::binary(ds, Split::Train);
    let base_records = data.len();
    let (mut n_aug_pos, mut n_aug_neg) = (0, 0);
    if config.augment_positive + config.augment_negative > 0 {
        let (_, set) = region.as_ref().expect("validated: augmentation needs regions.use");
        let train_points: Vec<Vec<f64>> = ds.split_records(Split::Train).iter().map(|r| r.vector.clone()).collect();
        let envelope = bounding_box(&train_points)?;
        let aug = AugmentConfig {
            n_positive: config.augment_positive,
            n_negative: config.augment_negative,
            seed: config.seed,
        };
        let (pos, neg) = augment(set, &envelope, &aug)?;
        n_aug_pos = pos.len();
        n_aug_neg = neg.len();
        data.extend_with(pos, BinaryLabel::Positive.index());
        data.extend_with(neg, BinaryLabel::Negative.index());
    }

    let net = MlpNetwork::init(&classifier_spec(ds.dim(), config.layers, 2)?, config.seed)?;
    let mut adversary = match (&region, config.attack_enabled) {
        (Some((_, set)), true) => {
            let mut a = make_adversary(set, &config.attack, config.attack_samples, config.seed.wrapping_add(1))?;
            a.set_exec(ctx.exec);
            Some(a)
        }
        _ => None,
    };
    let outcome = train(
        &net,
        &data,
        &config.train,
        adversary.as_mut().map(|a| a as &mut dyn AdversarySource),
    )?;
    let network = &outcome.network;
    let region_set = region.as_ref().map(|(_, s)| s);
    let test = evaluate(network, ds, Split::Test, region_set, ctx.exec);
    let train_eval = evaluate(network, ds, Split::Train, None, ctx.exec);

    let probe = if config.probe {
        let probe_config = TrainConfig {
            epochs: config.probe_epochs,
            ..config.train.clone()
        };
        let all = linear_probe(ds, ProbeMode::AllData, &probe_config)?;
        let tt = linear_probe(ds, ProbeMode::TrainTest, &probe_config)?;
        Some((all.accuracy, tt.accuracy))
    } else {
        None
    };

    let hash = &inputs.stages.train;
    let mut doc = network.to_document();
    doc.set("provenance.stage", "train");
    doc.set("provenance.hash", hash);
    write_text(&ctx.layout.network(), &doc.to_text("classifier network"))?;

    let mut metrics = provenance_line("train", hash);
    metrics.push_str("epoch\tobjective\tloss\taccuracy\n");
    let _ = writeln!(metrics, "0\tn/a\t{}\tn/a", fmt_float(outcome.initial_loss));
    for m in &outcome.history {
        let _ = writeln!(
            metrics,
            "{}\t{}\t{}\t{}",
            m.epoch,
            fmt_float(m.objective),
            fmt_float(m.loss),
            fmt_float(m.accuracy)
        );
    }
    write_text(&ctx.layout.train_metrics(), &metrics)?;

    let mut text = provenance_line("train", hash);
    let row = |text: &mut String, k: &str, v: String| {
        let _ = writeln!(text, "{k:<26}{v}");
    };
    row(
        &mut text,
        "network",
        format!(
            "{} layers, {} parameters",
            network.layers().len(),
            network.parameter_count()
        ),
    );
    row(
        &mut text,
        "training records",
        format!("{base_records} (+{n_aug_pos} augmented positive, +{n_aug_neg} augmented negative)"),
    );
    row(
        &mut text,
        "adversarial training",
        match (&region, adversary.is_some()) {
            (Some((v, _)), true) => format!(
                "{} samples per step, {} steps, epsilon {}, step scale {} in {v}",
                config.attack_samples,
                config.attack.steps,
                config.attack.epsilon,
                fmt_float(config.attack.step_scale)
            ),
            _ => "off".into(),
        },
    );
    row(
        &mut text,
        "loss weights",
        format!("alpha {} beta {}", fmt_float(config.train.alpha), fmt_float(config.train.beta)),
    );
    row(&mut text, "epochs", config.train.epochs.to_string());
    row(&mut text, "initial loss", format!("{:.6}", outcome.initial_loss));
    row(&mut text, "final loss", format!("{:.6}", outcome.final_loss()));
    row(&mut text, "train accuracy", accuracy_cell(&train_eval));
    row(&mut text, "test accuracy", accuracy_cell(&test));
    let c = &test.confusion;
    row(
        &mut text,
        "test confusion",
        format!(
            "positive->positive {}, positive->negative {}, negative->positive {}, negative->negative {}",
            c.get(BinaryLabel::Positive, BinaryLabel::Positive),
            c.get(BinaryLabel::Positive, BinaryLabel::Negative),
            c.get(BinaryLabel::Negative, BinaryLabel::Positive),
            c.get(BinaryLabel::Negative, BinaryLabel::Negative)
        ),
    );
    if let (Some((v, _)), Some((n, correct))) = (&region, test.in_region) {
        let acc = test.in_region_accuracy().map_or("n/a".into(), pct);
        row(&mut text, "test accuracy in region", format!("{acc} ({correct}/{n} inside {v})"));
    }
    if let Some((all, tt)) = probe {
        row(&mut text, "linear probe", format!("all-data {}, train/test {}", pct(all), pct(tt)));
    }
    write_text(&ctx.layout.train_report(), &text)?;

    Ok(TrainOutput {
        test,
        probe,
        files: vec![ctx.layout.network(), ctx.layout.train_metrics(), ctx.layout.train_report()],
        text,
    })
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone)]
pub struct RegionOutcome {
    pub variant: Variant,
    pub status: Status,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub regions: Vec<RegionOutcome>,
    /// `(radius, verified points)` per grid entry.
    pub grid: Vec<(f64, usize)>,
    pub points: usize,
    /// Radii found by the per-point search, in point order.
    pub radii: Vec<f64>,
    pub files: Vec<PathBuf>,
    pub text: String,
}

impl VerifyOutput {
    pub fn any_verified(&self) -> bool {
        self.regions.iter().any(|r| r.status.is_verified())
    }
}

fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

/// Coordinates of a counterexample echoed in the text report; the full
/// vectors go to the counterexample file.
const ECHO_COORDS: usize = 8;

fn echoed_for(echoed: &str, variant: &Variant) -> bool {
    let prefix = format!("counterexample in {variant} box ");
    echoed.lines().any(|l| l.starts_with(&prefix))
}

pub fn verify_options(config: &ExperimentConfig, strict_fp: bool) -> VerifyOptions {
    VerifyOptions {
        strict_fp,
        falsify: true,
        attack: AttackConfig {
            steps: config.falsify_steps,
            epsilon: EpsilonMode::Clip,
            step_scale: AttackConfig::default().step_scale,
        },
        restarts: config.restarts,
        seed: config.seed,
        box_budget: Some(Duration::from_secs_f64(config.box_budget_secs)),
    }
}

pub fn run_verify(ctx: &Context, inputs: &Inputs) -> CliResult<VerifyOutput> {
    let ds = &inputs.dataset;
    let config = &ctx.config;
    let target = config.target;
    let net = ctx.load_network(&inputs.stages)?;
    if net.input_dim() != ds.dim() {
        return Err(CliError::Validation(format!(
            "network expects dimension {}, dataset has {}",
            net.input_dim(),
            ds.dim()
        )));
    }
    let sets: Vec<(Variant, RegionSet)> = config
        .variants
        .iter()
        .map(|v| Ok((*v, ctx.load_region(v, &inputs.stages)?)))
        .collect::<CliResult<_>>()?;
    let options = verify_options(config, ctx.strict_fp);
    let hash = &inputs.stages.verify;

    let mut text = provenance_line("verify", hash);
    let _ = writeln!(
        text,
        "# interval bound propagation, target {}, strict floating point {}",
        target.as_str(),
        if ctx.strict_fp { "on" } else { "off" }
    );
    let _ = writeln!(
        text,
        "{:<22} | {:>5} | {:>8} | {:>9} | {:>7} | {:<9} | {:>12} | {:>10}",
        "Region", "Boxes", "Verified", "Falsified", "Unknown", "Status", "Min margin", "Volume"
    );
    let mut regions_tsv = provenance_line("verify", hash);
    regions_tsv.push_str("region\tboxes\tverified\tfalsified\tunknown\tstatus\tmin_margin\tlog10_volume\n");
    let mut timings = provenance_line("verify", hash);
    timings.push_str("region\tseconds\ttimed_out\n");
    let mut echoed = String::new();
    let mut counterexamples = provenance_line("verify", hash);
    counterexamples.push_str("region\tbox\tpredicted\tvector\n");
    let mut regions = Vec::new();
    for (variant, set) in &sets {
        let res = verify_region_set(&net, set, target, &options, ctx.exec)?;
        let count = |f: fn(&Status) -> bool| res.per_box.iter().filter(|r| f(&r.status)).count();
        let verified = count(|s| matches!(s, Status::Verified));
        let falsified = count(|s| matches!(s, Status::Falsified(_)));
        let unknown = count(|s| matches!(s, Status::Unknown));
        let volume = log_volume(set).total;
        let agg = &res.aggregate;
        let _ = writeln!(
            text,
            "{:<22} | {:>5} | {:>8} | {:>9} | {:>7} | {:<9} | {:>12.4e} | {:>10}",
            variant.to_string(),
            set.boxes().len(),
            verified,
            falsified,
            unknown,
            agg.status.name(),
            agg.margin,
            volume.to_scientific()
        );
        let _ = writeln!(
            regions_tsv,
            "{variant}\t{}\t{verified}\t{falsified}\t{unknown}\t{}\t{}\t{}",
            set.boxes().len(),
            agg.status.name(),
            fmt_float(agg.margin),
            fmt_float(volume.log10())
        );
        let _ = writeln!(timings, "{variant}\t{:.3}\t{}", agg.elapsed.as_secs_f64(), agg.timed_out);
        for (i, r) in res.per_box.iter().enumerate() {
            if let Some(x) = r.status.counterexample() {
                let predicted = BinaryLabel::from_index(net.predict(x)).map_or("?", |l| l.as_str());
                let coords: Vec<String> = x.iter().map(|v| fmt_float(*v)).collect();
                let _ = writeln!(counterexamples, "{variant}\t{i}\t{predicted}\t{}", coords.join(" "));
                if echoed_for(&echoed, variant) {
                    continue;
                }
                let shown = coords.len().min(ECHO_COORDS);
                let more = if coords.len() > shown { format!(", ... ({} coordinates)", coords.len()) } else { String::new() };
                let _ = writeln!(
                    echoed,
                    "counterexample in {variant} box {i}, classified {predicted}: [{}{more}]",
                    coords[..shown].join(", ")
                );
            }
        }
        regions.push(RegionOutcome {
            variant: *variant,
            status: agg.status.clone(),
            margin: agg.margin,
        });
    }

    text.push_str(&echoed);

    // ε-balls around correctly classified test points of the target class
    let mut records: Vec<_> = ds
        .split_records(Split::Test)
        .into_iter()
        .filter(|r| r.label.binary() == target && net.predict(&r.vector) == target.index())
        .collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if config.max_points > 0 {
        records.truncate(config.max_points);
    }
    let points: Vec<Vec<f64>> = records.iter().map(|r| r.vector.clone()).collect();
    let n = points.len();
    let _ = writeln!(
        text,
        "\n# l-infinity balls around {n} correctly classified test {} points (dimension {})",
        target.as_str(),
        ds.dim()
    );
    let _ = writeln!(text, "{:>10} | {:>18} | {:>12}", "Radius", "Verified", "Ball volume");
    let mut grid = Vec::new();
    for &eps in &config.eps_grid {
        let verified = ctx.exec.count(&points, |x| {
            Hyperrectangle::ball(x, eps)
                .map(|b| certified_margin(&net, &IntervalVector::from(&b), target, ctx.strict_fp).unwrap_or(f64::NAN))
                .is_ok_and(|m| m > 0.0)
        });
        let share = if n == 0 {
            "n/a".into()
        } else {
            format!("{verified}/{n} ({})", pct(verified as f64 / n as f64))
        };
        let _ = writeln!(
            text,
            "{:>10} | {:>18} | {:>12}",
            fmt_float(eps),
            share,
            log_volume_eps_ball(ds.dim(), eps).to_scientific()
        );
        grid.push((eps, verified));
    }

    let found = epsilon_search_many(
        &net,
        &points,
        target,
        config.eps_max,
        config.eps_tolerance,
        ctx.strict_fp,
        ctx.exec,
    );
    let mut eps_tsv = provenance_line("verify", hash);
    eps_tsv.push_str("id\tmax_radius\n");
    let mut radii = Vec::new();
    for (r, res) in records.iter().zip(&found) {
        match res {
            Ok(eps) => {
                radii.push(*eps);
                let _ = writeln!(eps_tsv, "{}\t{}", r.id, fmt_float(*eps));
            }
            Err(_) => {
                let _ = writeln!(eps_tsv, "{}\tn/a", r.id);
            }
        }
    }
    let mut sorted = radii.clone();
    sorted.sort_by(f64::total_cmp);
    let _ = match (sorted.first(), median(&sorted), sorted.last()) {
        (Some(lo), Some(mid), Some(hi)) => writeln!(
            text,
            "largest certified radius (tolerance {}, cap {}): min {} median {} max {} over {} points",
            fmt_float(config.eps_tolerance),
            fmt_float(config.eps_max),
            fmt_float(*lo),
            fmt_float(mid),
            fmt_float(*hi),
            sorted.len()
        ),
        _ => writeln!(text, "largest certified radius: n/a"),
    };
    if sorted.len() < n {
        let _ = writeln!(text, "{} points have no certified radius", n - sorted.len());
    }

    let layout = &ctx.layout;
    write_text(&layout.verify_report(), &text)?;
    write_text(&layout.verify_regions(), &regions_tsv)?;
    write_text(&layout.verify_eps(), &eps_tsv)?;
    write_text(&layout.counterexamples(), &counterexamples)?;
    write_text(&layout.verify_timings(), &timings)?;
    Ok(VerifyOutput {
        regions,
        grid,
        points: n,
        radii,
        files: vec![
            layout.verify_report(),
            layout.verify_regions(),
            layout.verify_eps(),
            layout.counterexamples(),
        ],
        text,
    })
}

// ---------------------------------------------------------------- pipeline

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub verify: VerifyOutput,
    pub text: String,
}

fn summary(ctx: &Context, stages: &Stages, files: &[PathBuf], train: &TrainOutput, verify: &VerifyOutput) -> CliResult<String> {
    let mut doc = KvDocument::new();
    doc.set("format", "pipeline-summary/1");
    doc.set("hash.dataset", &stages.dataset);
    doc.set("hash.regions", &stages.regions);
    doc.set("hash.train", &stages.train);
    doc.set("hash.verify", &stages.verify);
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    for f in sorted {
        let bytes = fs::read(f).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", f.display())))?;
        doc.set(format!("artifact.{}", ctx.layout.relative(f)), sha256_hex(&bytes));
    }
    doc.set(
        "result.test_accuracy",
        if train.test.total == 0 { "n/a".into() } else { fmt_float(train.test.accuracy) },
    );
    if let Some((all, tt)) = train.probe {
        doc.set("result.probe.all_data", fmt_float(all));
        doc.set("result.probe.train_test", fmt_float(tt));
    }
    for r in &verify.regions {
        doc.set(format!("result.region.{}", r.variant), r.status.name());
    }
    for (eps, n) in &verify.grid {
        doc.set(format!("result.ball.{}", fmt_float(*eps)), format!("{n}/{}", verify.points));
    }
    let mut sorted = verify.radii.clone();
    sorted.sort_by(f64::total_cmp);
    doc.set("result.radius.median", median(&sorted).map_or("n/a".into(), fmt_float));
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    Ok(doc.to_text(&format!("generated at unix time {stamp}")))
}

pub fn run_pipeline(ctx: &Context) -> CliResult<PipelineOutput> {
    let inputs = ctx.load_inputs()?;
    let marker = ctx.layout.failure_marker();
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| CliError::Runtime(format!("cannot remove {}: {e}", marker.display())))?;
    }
    let fail = |stage: &str, e: CliError| {
        let _ = write_text(&marker, &format!("stage = {stage}\nerror = {e}\n"));
        e
    };
    let regions = run_regions(ctx, &inputs).map_err(|e| fail("regions", e))?;
    let train = run_train(ctx, &inputs).map_err(|e| fail("train", e))?;
    let verify = run_verify(ctx, &inputs).map_err(|e| fail("verify", e))?;
    let files: Vec<PathBuf> = [&regions.files, &train.files, &verify.files].into_iter().flatten().cloned().collect();
    let text = summary(ctx, &inputs.stages, &files, &train, &verify).map_err(|e| fail("summary", e))?;
    write_text(&ctx.layout.summary(), &text).map_err(|e| fail("summary", e))?;
    Ok(PipelineOutput {
        text: format!("{}\n{}\n{}", regions.text, train.text, verify.text),
        verify,
    })
}

// ---------------------------------------------------------------- report

/// Prints the stage reports after checking that they match the current
/// configuration.
pub fn run_report(ctx: &Context) -> CliResult<String> {
    let inputs = ctx.load_inputs()?;
    let s = &inputs.stages;
    let mut out = String::new();
    for (path, stage, hash) in [
        (ctx.layout.containment_table(), "regions", &s.regions),
        (ctx.layout.train_report(), "train", &s.train),
        (ctx.layout.verify_report(), "verify", &s.verify),
    ] {
        let text = read_text(&path)?;
        check_text(&path, &text, stage, hash, ctx.force)?;
        let _ = writeln!(out, "== {stage} ({})", ctx.layout.relative(&path));
        out.extend(text.lines().skip(1).map(|l| format!("{l}\n")));
        out.push('\n');
    }
    Ok(out)
}
