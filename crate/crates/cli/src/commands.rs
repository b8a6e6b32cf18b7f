use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

use ssd_core::detector::{
    calibrate, classify, eigen_discrimination_report, euclid_score_batch, fewshot_fit_with,
    fit_with, ssd_k_score_batch, ssd_score_batch, Calibration, FewShotConfig, FitConfig, ModelFile,
};
use ssd_core::io::{
    generate, load_features, partition, save_features, select_rows, write_atomic, FeatureFormat,
    SynthSpec,
};
use ssd_core::losses::{JitterSpec, ToyExperiment, TrainConfig};
use ssd_core::metrics::{evaluate, EvalReport};
use ssd_core::{DetectorModel64, FewShotModel64, Matrix64};

use crate::{
    CalibrateArgs, ClassifyArgs, Command, EigenReportArgs, EvaluateArgs, FewshotArgs, FitArgs,
    OutputArgs, ScoreArgs, ScoreKind, SweepAugmentArgs, SweepClustersArgs, SynthArgs, TrainToyArgs,
};

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Score(a) => score(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Fewshot(a) => fewshot(a),
        Command::EigenReport(a) => eigen_report(a),
        Command::TrainToy(a) => train_toy(a),
        Command::SweepClusters(a) => sweep_clusters(a),
        Command::SweepAugment(a) => sweep_augment(a),
    }
}

fn emit(output: &OutputArgs, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<Matrix64> {
    load_features(path).with_context(|| format!("loading features from {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelFile<f64>> {
    ModelFile::load(path).with_context(|| format!("loading model from {}", path.display()))
}

fn ssd_model(path: &Path) -> Result<DetectorModel64> {
    match load_model(path)? {
        ModelFile::Ssd(m) => Ok(m),
        ModelFile::FewShot(_) => bail!("{} is a few-shot model; this command needs an SSD model", path.display()),
    }
}

fn format_of(path: &Path, forced: Option<&str>) -> Result<FeatureFormat> {
    Ok(match forced {
        Some(f) => f.parse()?,
        None => FeatureFormat::from_path(path),
    })
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = match (&a.preset, &a.spec) {
        (Some(name), None) => SynthSpec::preset(name, a.d, a.n, a.seed)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            let mut spec: SynthSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?;
            spec.seed = a.seed;
            spec
        }
        _ => bail!("give exactly one of --preset or --spec"),
    };
    let data = generate(&spec)?;
    save_features(&data.features, &a.out, format_of(&a.out, a.format.as_deref())?)?;
    if let Some(path) = &a.labels_out {
        let text: String = data.labels.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}

fn fit(a: &FitArgs) -> Result<()> {
    let features = load(&a.features)?;
    let (train, cal) = partition(&features, a.split, a.seed)?;
    let config = FitConfig {
        clusters: a.clusters,
        seed: a.seed,
        normalize: !a.no_normalize,
    };
    let model = fit_with(&train, &config)?;
    model.save(&a.model)?;
    if let Some(path) = &a.cal_out {
        save_features(&cal, path, FeatureFormat::from_path(path))?;
    }
    Ok(())
}

fn scores_for(model: &ModelFile<f64>, features: &Matrix64, kind: ScoreKind) -> Result<Vec<f64>> {
    Ok(match (model, kind) {
        (_, ScoreKind::Ssd) => model.score_batch(features)?,
        (ModelFile::Ssd(m), ScoreKind::Euclid) => euclid_score_batch(m, features)?,
        (ModelFile::FewShot(m), ScoreKind::Euclid) => euclid_score_batch(&m.in_model, features)?,
    })
}

fn calibrate_cmd(a: &CalibrateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let cal = match (&a.cal, &a.features) {
        (Some(path), _) => load(path)?,
        (None, Some(path)) => partition(&load(path)?, a.split, a.seed)?.1,
        (None, None) => bail!("give --cal or --features"),
    };
    let c = calibrate(&model.score_batch(&cal)?, a.tpr)?;
    emit(&a.output, &format!("{}\n", serde_json::to_string_pretty(&c)?))
}

fn score(a: &ScoreArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let scores = model.score_batch(&load(&a.features)?)?;
    let mut out = String::from("row\tscore\n");
    for (i, s) in scores.iter().enumerate() {
        writeln!(out, "{i}\t{s}")?;
    }
    emit(&a.output, &out)
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with("row\t"))
        .map(|(n, l)| {
            let field = l.split('\t').nth(1).unwrap_or(l).trim();
            field
                .parse::<f64>()
                .with_context(|| format!("{}: line {}: bad score {field:?}", path.display(), n + 1))
        })
        .collect()
}

fn classify_cmd(a: &ClassifyArgs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let text = std::fs::read_to_string(&a.calibration)
        .with_context(|| format!("reading {}", a.calibration.display()))?;
    let cal: Calibration = serde_json::from_str(&text)?;
    let mut out = String::from("row\tscore\toutlier\n");
    for (i, (s, o)) in scores.iter().zip(classify(&scores, &cal)).enumerate() {
        writeln!(out, "{i}\t{s}\t{o}")?;
    }
    emit(&a.output, &out)
}

fn report_text(report: &EvalReport, json: bool) -> String {
    if json {
        format!("{}\n", report.to_json())
    } else {
        format!("{}\n{}\n", EvalReport::TSV_HEADER, report.to_tsv_line())
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let in_scores = scores_for(&model, &load(&a.in_test)?, a.score)?;
    let ood_scores = scores_for(&model, &load(&a.ood)?, a.score)?;
    emit(&a.output, &report_text(&evaluate(&in_scores, &ood_scores, a.tpr)?, a.json))
}

fn few_shot_config(augment: usize, jitter: f64, seed: u64, shrinkage: bool, normalize: bool) -> FewShotConfig {
    FewShotConfig {
        n_augment: augment,
        jitter_scale: jitter,
        seed,
        shrinkage,
        normalize,
    }
}

fn pick_shots(path: &Path, k: usize, seed: u64) -> Result<Matrix64> {
    let all = load(path)?;
    select_rows(&all, k, seed).with_context(|| format!("choosing {k} shots from {}", path.display()))
}

fn fewshot(a: &FewshotArgs) -> Result<()> {
    let train = load(&a.in_features)?;
    let shots = pick_shots(&a.shots, a.k, a.seed)?;
    let config = few_shot_config(a.augment, a.jitter, a.seed, !a.no_shrinkage, !a.no_normalize);
    let model: FewShotModel64 = fewshot_fit_with(&train, &shots, &config)?;
    model.save(&a.model)?;

    if let (Some(in_path), Some(ood_path)) = (&a.eval_in, &a.eval_ood) {
        let (tin, tood) = (load(in_path)?, load(ood_path)?);
        let base = &model.in_model;
        let ssd = evaluate(&ssd_score_batch(base, &tin)?, &ssd_score_batch(base, &tood)?, a.tpr)?;
        let ssd_k = evaluate(&ssd_k_score_batch(&model, &tin)?, &ssd_k_score_batch(&model, &tood)?, a.tpr)?;
        let mut out = format!("detector\t{}\n", EvalReport::TSV_HEADER);
        writeln!(out, "ssd\t{}", ssd.to_tsv_line())?;
        writeln!(out, "ssd_k\t{}", ssd_k.to_tsv_line())?;
        emit(&a.output, &out)?;
    }
    Ok(())
}

fn eigen_report(a: &EigenReportArgs) -> Result<()> {
    let model = ssd_model(&a.model)?;
    let report = eigen_discrimination_report(&model, &load(&a.in_test)?, &load(&a.ood)?)?;
    emit(&a.output, &report.to_tsv())
}

fn train_toy(a: &TrainToyArgs) -> Result<()> {
    let defaults = ToyExperiment::default();
    let exp = ToyExperiment {
        jitter: JitterSpec {
            scale: a.jitter,
            resample: a.resample,
        },
        train: TrainConfig {
            steps: a.steps,
            lr: a.lr,
            seed: 0,
            batch_size: a.batch,
            temperature: a.temperature,
        },
        supervised: a.supervised,
        seed: a.seed,
        ..defaults
    };
    let report = exp.run()?;
    if let Some(path) = &a.trace_out {
        write_atomic(path, report.outcome.trace_csv().as_bytes())?;
    }
    if let Some(path) = &a.encoder_out {
        let json = serde_json::to_string_pretty(&report.outcome.encoder)?;
        write_atomic(path, json.as_bytes())?;
    }
    let losses = &report.outcome.losses;
    let mut out = String::from("encoder\tauroc\tloss\n");
    writeln!(out, "random\t{}\t{}", report.auroc_before, losses[0])?;
    writeln!(out, "trained\t{}\t{}", report.auroc_after, losses[losses.len() - 1])?;
    emit(&a.output, &out)
}

fn sweep_clusters(a: &SweepClustersArgs) -> Result<()> {
    let (train, tin, tood) = (load(&a.in_features)?, load(&a.in_test)?, load(&a.ood)?);
    let mut out = format!("clusters\t{}\n", EvalReport::TSV_HEADER);
    for &m in &a.clusters {
        let config = FitConfig {
            clusters: m,
            seed: a.seed,
            normalize: !a.no_normalize,
        };
        let model = fit_with(&train, &config).with_context(|| format!("fitting {m} clusters"))?;
        let r = evaluate(&ssd_score_batch(&model, &tin)?, &ssd_score_batch(&model, &tood)?, a.tpr)?;
        writeln!(out, "{m}\t{}", r.to_tsv_line())?;
    }
    emit(&a.output, &out)
}

fn sweep_augment(a: &SweepAugmentArgs) -> Result<()> {
    let (train, tin, tood) = (load(&a.in_features)?, load(&a.in_test)?, load(&a.ood)?);
    let shots = pick_shots(&a.shots, a.k, a.seed)?;
    let mut out = format!("n_augment\t{}\n", EvalReport::TSV_HEADER);
    for &n in &a.augment {
        let config = few_shot_config(n, a.jitter, a.seed, true, !a.no_normalize);
        let model = fewshot_fit_with(&train, &shots, &config)
            .with_context(|| format!("fitting with {n} augmentations"))?;
        let r = evaluate(&ssd_k_score_batch(&model, &tin)?, &ssd_k_score_batch(&model, &tood)?, a.tpr)?;
        writeln!(out, "{n}\t{}", r.to_tsv_line())?;
    }
    emit(&a.output, &out)
}
