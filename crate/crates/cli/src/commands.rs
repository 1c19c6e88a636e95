use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use annoqual_core::baselines::{bootstrap_sample_predictions, BootstrapPredictor, Hyperparams, ModelKind};
use annoqual_core::io::{
    load_dataset, load_frame, load_mm_params, load_samples, save_dataset, save_frame, save_mm_params, save_samples,
    write_atomic,
};
use annoqual_core::mm::{
    calibrate_single_model, fit_mm, select_regularization, EnsembleFrame, GibbsConfig, MmPredictor,
};
use annoqual_core::synth::text::{generate_corpus, NoiseModel, TextCorpusSpec};
use annoqual_core::synth::{generate, mock_samples, GeneratorSpec};
use annoqual_core::{
    aggregate_samples, calibration_report, confusion_metrics, crossfit_clean, rank_and_partition, Budget,
    CleaningPlan, ProbVector, SplitTag, UncertaintyRecord,
};
use annoqual_service::ProjectConfig;
use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

use crate::{
    BootstrapArgs, CalibrateArgs, CleanArgs, Command, Common, EnsembleAction, EvalArgs, FitArgs, GibbsArgs, Model,
    PredictArgs, ServeArgs, SynthFrameArgs, SynthKind, SynthSamplesArgs, SynthTextArgs, TriageArgs,
};

pub fn run(command: Command) -> Result<()> {
    let summary = match command {
        Command::Triage(a) => triage(a)?,
        Command::Clean(a) => clean(a)?,
        Command::Bootstrap(a) => bootstrap(a)?,
        Command::Ensemble { action } => match action {
            EnsembleAction::Fit(a) => ensemble_fit(a)?,
            EnsembleAction::Predict(a) => ensemble_predict(a)?,
        },
        Command::Eval(a) => eval(a)?,
        Command::Calibrate(a) => calibrate(a)?,
        Command::Synth { kind } => match kind {
            SynthKind::Frame(a) => synth_frame(a)?,
            SynthKind::Text(a) => synth_text(a)?,
            SynthKind::Samples(a) => synth_samples(a)?,
        },
        Command::Serve(a) => return serve(a),
    };
    println!("{summary}");
    Ok(())
}

fn out_json(common: &Common) -> Value {
    json!(common.out.as_ref().map(|p| p.display().to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn kind(model: Model) -> ModelKind {
    match model {
        Model::Nb => ModelKind::NaiveBayes,
        Model::Lr => ModelKind::LogisticRegression,
    }
}

fn gibbs_config(g: &GibbsArgs, seed: u64) -> GibbsConfig {
    GibbsConfig {
        components: g.components,
        iterations: g.iterations,
        burn_in: g.burn_in,
        thinning: g.thinning,
        seed,
        ..Default::default()
    }
}

fn record_row(r: &UncertaintyRecord) -> String {
    let probs: Vec<String> = r.mean.values().iter().map(f64::to_string).collect();
    format!("{}\t{}\t{}\t{}", r.instance_id, r.variance, r.predicted_class, probs.join("\t"))
}

fn triage(a: TriageArgs) -> Result<Value> {
    let matrix = load_samples(&a.samples).with_context(|| format!("loading {}", a.samples.display()))?;
    let budget = match (a.fraction, a.count) {
        (Some(f), _) => Budget::Fraction(f),
        (None, Some(c)) => Budget::Count(c),
        (None, None) => bail!("one of --fraction or --count is required"),
    };
    let records = aggregate_samples(&matrix)?;
    let partition = rank_and_partition(&records, budget)?;
    if let Some(out) = &a.common.out {
        let by_id: HashMap<&str, &UncertaintyRecord> = records.iter().map(|r| (r.instance_id.as_str(), r)).collect();
        let mut text = String::from("instance_id\tvariance\tpredicted_class");
        for k in 1..=matrix.num_classes() {
            write!(text, "\tmean_p_{k}")?;
        }
        text.push_str("\tpartition\n");
        for (ids, tag) in [(&partition.uncertain, "uncertain"), (&partition.certain, "certain")] {
            for id in ids {
                writeln!(text, "{}\t{tag}", record_row(by_id[id.as_str()]))?;
            }
        }
        write_text(out, &text)?;
    }
    for w in &partition.warnings {
        log::warn!("{w}");
    }
    Ok(json!({
        "command": "triage",
        "model_id": matrix.model_id(),
        "instances": records.len(),
        "flagged": partition.uncertain.len(),
        "threshold": partition.threshold_variance,
        "out": out_json(&a.common),
    }))
}

fn clean(a: CleanArgs) -> Result<Value> {
    let dataset = load_dataset(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let plan = CleaningPlan {
        folds: a.folds,
        removal_fraction: a.fraction,
        samples_per_instance: a.samples,
        seed: a.common.seed,
    };
    let outcome = crossfit_clean(&dataset, &plan, &BootstrapPredictor::new(kind(a.model)))?;
    if let Some(out) = &a.common.out {
        save_dataset(out, &outcome.cleaned).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(path) = &a.removed {
        let mut text = String::from("instance_id\tvariance\tpredicted_class\tlabel\n");
        for r in &outcome.removed {
            let label = dataset.get(&r.instance_id).and_then(|i| i.gold_label).expect("cleaning needs labels");
            writeln!(text, "{}\t{}\t{}\t{label}", r.instance_id, r.variance, r.predicted_class)?;
        }
        write_text(path, &text)?;
    }
    Ok(json!({
        "command": "clean",
        "instances": dataset.len(),
        "removed": outcome.removed.len(),
        "kept": outcome.cleaned.len(),
        "threshold": outcome.removed.last().map(|r| r.variance),
        "out": out_json(&a.common),
    }))
}

fn bootstrap(a: BootstrapArgs) -> Result<Value> {
    let train = load_dataset(&a.train).with_context(|| format!("loading {}", a.train.display()))?;
    let targets = load_dataset(&a.targets).with_context(|| format!("loading {}", a.targets.display()))?;
    let matrix = bootstrap_sample_predictions(
        &train,
        targets.instances(),
        kind(a.model),
        &Hyperparams::default(),
        a.samples,
        a.common.seed,
    )?;
    if let Some(out) = &a.common.out {
        save_samples(out, &matrix).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(json!({
        "command": "bootstrap",
        "model_id": matrix.model_id(),
        "instances": matrix.len(),
        "samples": matrix.num_samples(),
        "out": out_json(&a.common),
    }))
}

fn read_frame(path: &Path) -> Result<EnsembleFrame> {
    load_frame(path).with_context(|| format!("loading {}", path.display()))
}

fn ensemble_fit(a: FitArgs) -> Result<Value> {
    let frame = read_frame(&a.frame)?;
    let fit = fit_mm(&frame, &gibbs_config(&a.gibbs, a.common.seed))?;
    let mut params = fit.params;
    if let Some(path) = &a.validation {
        let validation = read_frame(path)?;
        select_regularization(&mut params, &validation, &a.grid)?;
    }
    if let Some(out) = &a.common.out {
        save_mm_params(out, &params).with_context(|| format!("writing {}", out.display()))?;
    }
    let final_ll: Vec<f64> = fit
        .diagnostics
        .iter()
        .map(|d| d.log_likelihood.last().copied().unwrap_or(f64::NAN))
        .collect();
    Ok(json!({
        "command": "ensemble fit",
        "rows": frame.len(),
        "classes": params.num_classes,
        "models": params.model_ids,
        "draws": params.num_draws(),
        "class_counts": params.classes.iter().map(|c| c.count).collect::<Vec<_>>(),
        "inflation": params.inflation,
        "final_log_likelihood": final_ll,
        "out": out_json(&a.common),
    }))
}

fn ensemble_predict(a: PredictArgs) -> Result<Value> {
    let params = load_mm_params(&a.params).with_context(|| format!("loading {}", a.params.display()))?;
    let frame = read_frame(&a.frame)?;
    if frame.model_ids().contains(&a.name) {
        bail!("frame already has a member named {:?}; choose another --name", a.name);
    }
    let columns = params
        .model_ids
        .iter()
        .map(|id| {
            frame
                .model_ids()
                .iter()
                .position(|m| m == id)
                .ok_or_else(|| anyhow!("frame has no member {id:?} required by the parameters"))
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = MmPredictor::new(&params)?.predict_frame(&frame.select_models(&columns))?;
    let mut model_ids = frame.model_ids().to_vec();
    model_ids.push(a.name.clone());
    let rows = frame
        .rows()
        .zip(&predictions)
        .map(|(row, p)| row.iter().cloned().chain(std::iter::once(p.clone())).collect())
        .collect();
    let combined = EnsembleFrame::new(
        frame.num_classes(),
        model_ids,
        frame.instance_ids().to_vec(),
        rows,
        frame.labels().map(<[usize]>::to_vec),
    )?;
    if let Some(out) = &a.common.out {
        save_frame(out, &combined).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(json!({
        "command": "ensemble predict",
        "rows": combined.len(),
        "name": a.name,
        "out": out_json(&a.common),
    }))
}

fn eval(a: EvalArgs) -> Result<Value> {
    match (&a.frame, &a.samples, &a.dataset) {
        (Some(frame), _, _) => eval_frame(&read_frame(frame)?, &a),
        (None, Some(samples), Some(dataset)) => eval_budgets(samples, dataset, &a),
        _ => bail!("pass --frame, or --samples with --dataset"),
    }
}

fn eval_frame(frame: &EnsembleFrame, a: &EvalArgs) -> Result<Value> {
    let labels = frame.labels().ok_or_else(|| anyhow!("frame has no labels"))?;
    let gold: Vec<bool> = labels.iter().map(|&l| l == a.positive).collect();
    let mut rows = Vec::new();
    let mut table = String::from("model\taccuracy\tprecision\trecall\tf1\tbrier\tece\ttp\tfp\tfn\ttn\n");
    for (j, model) in frame.model_ids().iter().enumerate() {
        let probs: Vec<&ProbVector> = frame.member(j).collect();
        let predicted: Vec<usize> = probs.iter().map(|p| p.argmax()).collect();
        let metrics = confusion_metrics(&predicted, labels, a.positive)?;
        let positive: Vec<f64> = probs.iter().map(|p| p.get(a.positive)).collect();
        let calibration = calibration_report(&positive, &gold, a.bins)?;
        writeln!(
            table,
            "{model}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}\t{}",
            metrics.accuracy,
            metrics.precision,
            metrics.recall,
            metrics.f1,
            calibration.brier,
            calibration.ece,
            metrics.tp,
            metrics.fp,
            metrics.fn_,
            metrics.tn
        )?;
        rows.push(json!({
            "model": model,
            "accuracy": metrics.accuracy,
            "precision": metrics.precision,
            "recall": metrics.recall,
            "f1": metrics.f1,
            "brier": calibration.brier,
            "ece": calibration.ece,
        }));
    }
    eprint!("{table}");
    if let Some(out) = &a.common.out {
        write_text(out, &table)?;
    }
    Ok(json!({
        "command": "eval",
        "rows": frame.len(),
        "positive_class": a.positive,
        "models": rows,
        "out": out_json(&a.common),
    }))
}

fn eval_budgets(samples: &Path, dataset: &Path, a: &EvalArgs) -> Result<Value> {
    let matrix = load_samples(samples).with_context(|| format!("loading {}", samples.display()))?;
    let dataset = load_dataset(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    let records = aggregate_samples(&matrix)?;
    let by_id: HashMap<&str, &UncertaintyRecord> = records.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let gold = |id: &str| -> Result<usize> {
        dataset
            .get(id)
            .and_then(|i| i.gold_label)
            .ok_or_else(|| anyhow!("instance {id:?} has no label in the dataset"))
    };
    let mut rows = Vec::new();
    let mut table = String::from("budget\tremoved\tretained\taccuracy\tprecision\trecall\tf1\n");
    for &budget in &a.budgets {
        let partition = rank_and_partition(&records, Budget::Fraction(budget))?;
        if partition.certain.is_empty() {
            bail!("budget {budget} leaves no instances to score");
        }
        let predicted: Vec<usize> = partition.certain.iter().map(|id| by_id[id.as_str()].predicted_class).collect();
        let labels: Vec<usize> = partition.certain.iter().map(|id| gold(id)).collect::<Result<_>>()?;
        let m = confusion_metrics(&predicted, &labels, a.positive)?;
        writeln!(
            table,
            "{budget}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            partition.uncertain.len(),
            partition.certain.len(),
            m.accuracy,
            m.precision,
            m.recall,
            m.f1
        )?;
        rows.push(json!({
            "budget": budget,
            "removed": partition.uncertain.len(),
            "retained": partition.certain.len(),
            "accuracy": m.accuracy,
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
        }));
    }
    eprint!("{table}");
    if let Some(out) = &a.common.out {
        write_text(out, &table)?;
    }
    Ok(json!({
        "command": "eval",
        "instances": records.len(),
        "budgets": rows,
        "out": out_json(&a.common),
    }))
}

fn calibrate(a: CalibrateArgs) -> Result<Value> {
    let frame = read_frame(&a.frame)?;
    let labels = frame.labels().ok_or_else(|| anyhow!("frame has no labels"))?;
    let column = |f: &EnsembleFrame| -> Result<usize> {
        match &a.model {
            Some(name) => f
                .model_ids()
                .iter()
                .position(|m| m == name)
                .ok_or_else(|| anyhow!("frame has no member {name:?}")),
            None => Ok(0),
        }
    };
    let j = column(&frame)?;
    let model = frame.model_ids()[j].clone();
    let gold: Vec<bool> = labels.iter().map(|&l| l == a.positive).collect();
    let raw: Vec<ProbVector> = frame.member(j).cloned().collect();
    let raw_report = calibration_report(&raw.iter().map(|p| p.get(a.positive)).collect::<Vec<_>>(), &gold, a.bins)?;

    let mut series = vec![("raw", raw_report.clone())];
    let mut calibrated_summary = Value::Null;
    let mut changed = Value::Null;
    if let Some(train_path) = &a.train {
        let train = read_frame(train_path)?;
        let train_single = train.select_models(&[column(&train)?]);
        let params = calibrate_single_model(&train_single, &gibbs_config(&a.gibbs, a.common.seed))?.params;
        let calibrated = MmPredictor::new(&params)?.predict_frame(&frame.select_models(&[j]))?;
        let report = calibration_report(
            &calibrated.iter().map(|p| p.get(a.positive)).collect::<Vec<_>>(),
            &gold,
            a.bins,
        )?;
        let flips = raw.iter().zip(&calibrated).filter(|(r, c)| r.argmax() != c.argmax()).count();
        changed = json!(flips as f64 / raw.len() as f64);
        calibrated_summary = json!({"ece": report.ece, "brier": report.brier});
        series.push(("calibrated", report));
    }

    let mut table = String::from("series\tbin\tlower\tupper\tconfidence\taccuracy\tcount\n");
    for (name, report) in &series {
        for (b, bin) in report.bins.iter().enumerate() {
            writeln!(
                table,
                "{name}\t{}\t{:.3}\t{:.3}\t{:.4}\t{:.4}\t{}",
                b + 1,
                bin.lower,
                bin.upper,
                bin.confidence,
                bin.accuracy,
                bin.count
            )?;
        }
    }
    eprint!("{table}");
    if let Some(out) = &a.common.out {
        write_text(out, &table)?;
    }
    Ok(json!({
        "command": "calibrate",
        "model": model,
        "rows": frame.len(),
        "raw": {"ece": raw_report.ece, "brier": raw_report.brier},
        "calibrated": calibrated_summary,
        "changed_fraction": changed,
        "out": out_json(&a.common),
    }))
}

fn synth_frame(a: SynthFrameArgs) -> Result<Value> {
    let spec = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec = GeneratorSpec::from_json(&text)?;
            let n = spec.n;
            spec.with_seed(a.common.seed, n)
        }
        None => GeneratorSpec::correlated_binary(&a.shifts, a.separation, a.sd, a.correlation, a.n, a.common.seed)?,
    };
    let frame = generate(&spec)?;
    if let Some(out) = &a.common.out {
        save_frame(out, &frame).with_context(|| format!("writing {}", out.display()))?;
    }
    let mut counts = vec![0usize; frame.num_classes()];
    for &l in frame.labels().unwrap_or(&[]) {
        counts[l] += 1;
    }
    Ok(json!({
        "command": "synth frame",
        "rows": frame.len(),
        "models": frame.model_ids(),
        "class_counts": counts,
        "out": out_json(&a.common),
    }))
}

fn synth_text(a: SynthTextArgs) -> Result<Value> {
    let spec = TextCorpusSpec {
        n: a.n,
        positive_rate: a.positive_rate,
        noise_rate: a.noise,
        noise_model: if a.power > 0.0 {
            NoiseModel::Ambiguity { power: a.power }
        } else {
            NoiseModel::Uniform
        },
        min_len: a.min_len,
        max_len: a.max_len,
        id_prefix: a.prefix.clone(),
        seed: a.common.seed,
        ..Default::default()
    };
    let corpus = generate_corpus(&spec, SplitTag::Unsplit)?;
    if let Some(out) = &a.common.out {
        save_dataset(out, &corpus.dataset).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(truth) = &a.truth {
        save_dataset(truth, &corpus.clean_dataset()).with_context(|| format!("writing {}", truth.display()))?;
    }
    Ok(json!({
        "command": "synth text",
        "instances": corpus.dataset.len(),
        "flipped": corpus.flipped.iter().filter(|f| **f).count(),
        "positives": corpus.true_labels.iter().filter(|&&l| l == 1).count(),
        "out": out_json(&a.common),
    }))
}

fn synth_samples(a: SynthSamplesArgs) -> Result<Value> {
    let matrix = mock_samples(a.n, a.samples, a.common.seed)?;
    if let Some(out) = &a.common.out {
        save_samples(out, &matrix).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(json!({
        "command": "synth samples",
        "instances": matrix.len(),
        "samples": matrix.num_samples(),
        "out": out_json(&a.common),
    }))
}

fn serve(a: ServeArgs) -> Result<()> {
    let config = ProjectConfig {
        fraction: a.fraction,
        hint_mode: a.hint_source,
        gibbs: gibbs_config(&a.gibbs, a.common.seed),
        ..ProjectConfig::new(PathBuf::from(&a.project))
    };
    let summary = json!({
        "command": "serve",
        "project": a.project.display().to_string(),
        "listen": a.listen.to_string(),
        "out": out_json(&a.common),
    });
    if let Some(out) = &a.common.out {
        write_text(out, &format!("{summary}\n"))?;
    }
    println!("{summary}");
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(annoqual_service::serve(config, a.listen))?;
    Ok(())
}
