use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clsr_core::checkpoint::Checkpoint;
use clsr_core::data::{make_synthetic_dataset, read_feature_bank, write_feature_bank, FeatureBank, FeatureItem};
use clsr_core::dsp::{load_wav, LogMelExtractor, MelConfig};
use clsr_core::eval::{ablation_run, evaluate, AblationTable, EvalError, EvalReport, RetrievalReport};
use clsr_core::trainer::{train_with_observer, write_epoch_log, write_step_log, StepRecord, TrainError, TrainEvent};
use clsr_core::{Manifest, Modality, PairedDataset};

use crate::config::{RunConfig, SplitKind};
use crate::CliError;

/// Tolerance of the logged loss identities.
pub const RECONCILE_TOL: f64 = 1e-5;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Invariant(m) => CliError::Invariant(m),
        other => runtime(other),
    }
}

fn train_error(e: TrainError, out: &Path) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(m),
        TrainError::NonFiniteLoss { ref last_good, .. } | TrainError::NonFiniteGradient { ref last_good, .. } => {
            let path = out.join("last_good.ckpt");
            let saved = match last_good.write(&path) {
                Ok(()) => format!("; last good parameters in {}", path.display()),
                Err(w) => format!("; could not save last good parameters: {w}"),
            };
            CliError::NonFinite(format!("{e}{saved}"))
        }
        TrainError::Eval(EvalError::Invariant(m)) => CliError::Invariant(m),
        other => runtime(other),
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<PairedDataset, CliError> {
    let (audio, text, manifest) = cfg.require_data()?;
    let read = |p: &Path| read_feature_bank(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())));
    let audio = read(audio)?;
    let text = read(text)?;
    let manifest = Manifest::read(manifest).map_err(|e| CliError::Runtime(format!("{}: {e}", manifest.display())))?;
    PairedDataset::new(&audio, &text, &manifest).map_err(runtime)
}

/// Mean-pooled log-mel vectors for every `.wav` in `dir`, ordered by file name.
pub fn featurize(dir: &Path, out: &Path, mel: &MelConfig) -> Result<FeatureBank, CliError> {
    let extractor = LogMelExtractor::new(mel.clone()).map_err(|e| CliError::Config(format!("dsp: {e}")))?;
    let entries = fs::read_dir(dir).map_err(|e| CliError::Config(format!("--wav-dir {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(CliError::Runtime(format!("no .wav files in {}", dir.display())));
    }
    let mut items = Vec::new();
    let mut failures = 0;
    for path in &files {
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match load_wav(path).and_then(|clip| extractor.clip_features(&clip)) {
            Ok(vector) => items.push(FeatureItem { id, vector }),
            Err(e) => {
                failures += 1;
                eprintln!("featurize: {}: {e}", path.display());
            }
        }
    }
    if items.is_empty() {
        return Err(CliError::Runtime(format!("all {failures} WAV files failed")));
    }
    let bank = FeatureBank::from_items(Modality::Audio, mel.n_mels, items).map_err(runtime)?;
    write_feature_bank(&bank, out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    Ok(bank)
}

/// Writes banks and manifest, then points the config's data paths at them.
pub fn synth(cfg: &mut RunConfig) -> Result<(), CliError> {
    let out = cfg.output_dir()?.to_path_buf();
    let seed = cfg.seed.unwrap_or_default();
    let s = make_synthetic_dataset(&cfg.synth, seed).map_err(|e| CliError::Config(format!("synth: {e}")))?;
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let paths = (out.join("audio.clsrfb"), out.join("text.clsrfb"), out.join("manifest.json"));
    write_feature_bank(&s.audio, &paths.0).map_err(runtime)?;
    write_feature_bank(&s.text, &paths.1).map_err(runtime)?;
    s.manifest.write(&paths.2).map_err(runtime)?;
    cfg.data.audio_bank = Some(paths.0);
    cfg.data.text_bank = Some(paths.1);
    cfg.data.manifest = Some(paths.2);
    cfg.write_run_record()?;
    println!(
        "synth: {} audio, {} captions -> {}",
        s.audio.len(),
        s.text.len(),
        out.display()
    );
    Ok(())
}

pub fn check_log(log: &[StepRecord], alpha: f64, beta: f64) -> Result<(), CliError> {
    for r in log {
        let err = r.loss.reconciliation_error(alpha, beta);
        if err.is_nan() || err > RECONCILE_TOL {
            return Err(CliError::Invariant(format!(
                "step {}: loss terms do not reconcile (error {err})",
                r.step
            )));
        }
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    let out = cfg.output_dir()?.to_path_buf();
    let data = load_dataset(cfg)?;
    cfg.write_run_record()?;
    let loss = cfg.variant.loss_config(&cfg.train.loss);
    let outcome = train_with_observer(&cfg.train, &data, &loss, |event| {
        if quiet {
            return;
        }
        match event {
            TrainEvent::Step(r) => println!(
                "epoch {} step {} total={:.6} tau={:.6}",
                r.epoch, r.step, r.loss.total, r.loss.tau
            ),
            TrainEvent::Epoch(e) => {
                let val = e
                    .val
                    .as_ref()
                    .map(|v| format!(" val_r1 a2t={:.4} t2a={:.4}", v.a2t.r1, v.t2a.r1))
                    .unwrap_or_default();
                println!(
                    "epoch {} done lr={} mean_total={:.6} tau=[{:.6}, {:.6}] dropped={}{val}",
                    e.epoch, e.lr, e.mean_total, e.tau_min, e.tau_max, e.dropped
                );
            }
        }
    })
    .map_err(|e| train_error(e, &out))?;

    write_with(&out.join("train_log.csv"), |w| write_step_log(&outcome.log, w))?;
    write_with(&out.join("epochs.csv"), |w| write_epoch_log(&outcome.epochs, w))?;
    outcome
        .final_checkpoint(cfg.train.seed)
        .write(out.join("final.ckpt"))
        .map_err(runtime)?;
    if let Some(best) = &outcome.best {
        best.write(out.join("best.ckpt")).map_err(runtime)?;
    }
    check_log(&outcome.log, loss.alpha, loss.beta)?;
    println!("train: {} steps -> {}", outcome.log.len(), out.display());
    Ok(())
}

pub fn split_pairs(cfg: &RunConfig, data: &PairedDataset) -> Vec<usize> {
    let split = data.split(cfg.train.val_fraction, cfg.train.seed);
    match cfg.eval.split {
        SplitKind::Val => split.val,
        SplitKind::Train => split.train,
        SplitKind::All => data.all_pairs(),
    }
}

pub const REPORT_HEADER: &str = "direction,n_queries,r1,r5,r10";

fn report_row(r: &RetrievalReport) -> String {
    format!("{},{},{},{},{}", r.direction, r.n_queries, r.r1, r.r5, r.r10)
}

pub fn report_text(report: &EvalReport) -> String {
    let mut s = format!("{:<4} | {:>7} | {:>6} {:>6} {:>6}\n", "", "queries", "R@1", "R@5", "R@10");
    for r in [&report.a2t, &report.t2a] {
        s.push_str(&format!(
            "{:<4} | {:>7} | {:>6.2} {:>6.2} {:>6.2}\n",
            r.direction.to_string(),
            r.n_queries,
            100.0 * r.r1,
            100.0 * r.r5,
            100.0 * r.r10
        ));
    }
    s
}

pub fn eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    let out = cfg.output_dir()?.to_path_buf();
    let checkpoint = match &cfg.eval.checkpoint {
        Some(p) => p.clone(),
        None => out.join("final.ckpt"),
    };
    if !checkpoint.exists() {
        return Err(CliError::Config(format!(
            "eval.checkpoint: path does not exist: {}",
            checkpoint.display()
        )));
    }
    let data = load_dataset(cfg)?;
    let ck = Checkpoint::read(&checkpoint).map_err(|e| CliError::Runtime(format!("{}: {e}", checkpoint.display())))?;
    if ck.seed != cfg.train.seed {
        eprintln!(
            "eval: checkpoint was trained with seed {} but the split uses seed {}",
            ck.seed, cfg.train.seed
        );
    }
    let mut record = cfg.clone();
    record.eval.checkpoint = Some(checkpoint);
    record.write_run_record()?;
    let pairs = split_pairs(cfg, &data);
    if pairs.is_empty() {
        return Err(CliError::Config("eval.split: selected split is empty".into()));
    }
    let report = evaluate(&ck.params, &data, &pairs).map_err(eval_error)?;
    write_with(&out.join("retrieval.csv"), |w| {
        writeln!(w, "{REPORT_HEADER}")?;
        writeln!(w, "{}", report_row(&report.a2t))?;
        writeln!(w, "{}", report_row(&report.t2a))
    })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(out.join("retrieval.json"), json).map_err(|e| CliError::io(&out, e))?;
    print!("{}", report_text(&report));
    Ok(report)
}

pub fn ablate(cfg: &RunConfig) -> Result<AblationTable, CliError> {
    let out = cfg.output_dir()?.to_path_buf();
    let data = load_dataset(cfg)?;
    let mut record = cfg.clone();
    if record.ablation.seeds.is_empty() {
        record.ablation.seeds = vec![cfg.train.seed];
    }
    record.write_run_record()?;
    let table = ablation_run(&cfg.train, &record.ablation.variants, &record.ablation.seeds, &data)
        .map_err(|e| train_error(e, &out))?;

    let logs = out.join("logs");
    fs::create_dir_all(&logs).map_err(|e| CliError::io(&logs, e))?;
    for run in &table.runs {
        let path = logs.join(format!("{}_seed{}.csv", run.variant.key(), run.seed));
        write_with(&path, |w| write_step_log(&run.outcome.log, w))?;
        check_log(&run.outcome.log, run.outcome.loss_config.alpha, run.outcome.loss_config.beta)?;
        for r in [&run.report.a2t, &run.report.t2a] {
            r.check().map_err(eval_error)?;
        }
    }
    write_with(&out.join("ablation.csv"), |w| table.write_csv(w))?;
    write_with(&out.join("ablation_runs.csv"), |w| {
        writeln!(w, "variant,seed,{REPORT_HEADER}")?;
        for run in &table.runs {
            for r in [&run.report.a2t, &run.report.t2a] {
                writeln!(w, "{},{},{}", run.variant.key(), run.seed, report_row(r))?;
            }
        }
        Ok(())
    })?;
    let text = table.to_text();
    fs::write(out.join("ablation.txt"), &text).map_err(|e| CliError::io(&out, e))?;
    print!("{text}");
    Ok(table)
}
