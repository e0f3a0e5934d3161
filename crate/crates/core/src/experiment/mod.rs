//! Experiment directories: cohort generation, the training grid,
//! evaluation and report emission.
//!
//! ```text
//! <exp>/experiment.json                       config echo
//! <exp>/cohort/...                            see phantom::store
//! <exp>/runs/<mode>_wc<w>/fold<f>/repeat<r>/
//!     run.json        run config echo + manifest digest + hash
//!     loss_log.txt    one row per iteration
//!     checkpoint.bin  training state at the last finished epoch
//!     model.bin       final ModelBundle (present once the run finished)
//!     eval.json       per-slice scores on the held-out fold
//! <exp>/eval/slices.csv                       all scores of finished runs
//! <exp>/report/       report.json, report.txt, slices.csv, completeness.txt, figures/
//! ```

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use config::{Cell, ExperimentConfig, Profile, TrainTemplate, DEFAULT_WEIGHTS};

use crate::archive::write_atomic;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_and_report, optimal_two_threshold, pseudo_healthy_eval, render_text, sample_grid, save_png, to_csv,
    EvalRecord, Exemplar, GridSpec, ReportTable,
};
use crate::nets::ModelBundle;
use crate::phantom::store::{self, Manifest};
use crate::phantom::{generate_cohort, make_folds, Cohort, Domain, Image, Severity, Slice};
use crate::seed::sha256_hex;
use crate::train::{fingerprint_for, format_loss_log, TrainConfig, TrainData, Trainer};

pub const OUTPUT_ROOT_ENV: &str = "ASYMCYCLE_OUTPUT_ROOT";
pub const EXPERIMENT_FILE: &str = "experiment.json";

pub fn cohort_dir(exp: &Path) -> PathBuf {
    exp.join("cohort")
}

pub fn report_dir(exp: &Path) -> PathBuf {
    exp.join("report")
}

/// Resolves a relative experiment path against the output-root override.
pub fn resolve_dir(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => Path::new(&root).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn load_experiment(exp: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&exp.join(EXPERIMENT_FILE))
}

/// Writes the config echo, cohort and fold plan. A non-empty experiment
/// directory is refused unless `overwrite` is set.
pub fn gen_data(exp: &Path, config: &ExperimentConfig, overwrite: bool) -> Result<Manifest> {
    config.validate()?;
    if store::is_non_empty(exp) {
        if !overwrite {
            return Err(Error::NotEmpty(exp.to_path_buf()));
        }
        fs::remove_dir_all(exp).map_err(|e| Error::io(exp, e))?;
    }
    let cohort = generate_cohort(&config.cohort)?;
    let folds = make_folds(&cohort.patients(), config.folds, config.fold_seed())?;
    write_text(&exp.join(EXPERIMENT_FILE), &config.to_json())?;
    store::write_cohort(&cohort_dir(exp), &cohort, &folds, config.fold_seed(), false)
}

/// One training run of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cell: Cell,
    pub fold: usize,
    pub repeat: usize,
    pub dir: PathBuf,
}

pub fn run_specs(exp: &Path, config: &ExperimentConfig) -> Vec<RunSpec> {
    let mut v = Vec::new();
    for &cell in &config.cells {
        for fold in 0..config.folds {
            for repeat in 0..config.repeats {
                v.push(RunSpec {
                    cell,
                    fold,
                    repeat,
                    dir: exp
                        .join("runs")
                        .join(cell.dir_name())
                        .join(format!("fold{fold}"))
                        .join(format!("repeat{repeat}")),
                });
            }
        }
    }
    v
}

/// Self-description of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub train: TrainConfig,
    pub fold: usize,
    pub repeat: usize,
    pub manifest_digest: String,
    pub hash: String,
}

impl RunEcho {
    pub fn new(train: TrainConfig, fold: usize, repeat: usize, manifest_digest: String) -> Self {
        let hash = sha256_hex(
            serde_json::to_string(&(&train, fold, repeat, &manifest_digest))
                .expect("serializes")
                .as_bytes(),
        );
        Self {
            train,
            fold,
            repeat,
            manifest_digest,
            hash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Trained,
    Resumed,
    Skipped,
}

pub fn is_finished(run: &RunSpec) -> bool {
    run.dir.join("model.bin").is_file()
}

/// Trains (or resumes, or skips) one run. Existing run state whose echo
/// disagrees with the requested configuration is refused.
pub fn execute_run(
    run: &RunSpec,
    config: &ExperimentConfig,
    manifest: &Manifest,
    cohort: &Cohort,
) -> Result<RunStatus> {
    let train = config.train_config(run.cell, run.fold, run.repeat);
    let echo = RunEcho::new(train.clone(), run.fold, run.repeat, manifest.digest());
    let echo_path = run.dir.join("run.json");
    if echo_path.is_file() {
        let text = fs::read_to_string(&echo_path).map_err(|e| Error::io(&echo_path, e))?;
        let existing: RunEcho = serde_json::from_str(&text)?;
        if existing.hash != echo.hash {
            return Err(Error::StateMismatch(format!(
                "{} was created with a different configuration",
                run.dir.display()
            )));
        }
        if is_finished(run) {
            return Ok(RunStatus::Skipped);
        }
    } else if store::is_non_empty(&run.dir) {
        return Err(Error::StateMismatch(format!(
            "{} holds files but no run.json",
            run.dir.display()
        )));
    }
    write_text(&echo_path, &serde_json::to_string_pretty(&echo)?)?;

    let data = TrainData::from_cohort(cohort, &manifest.folds, run.fold)?;
    let checkpoint = run.dir.join("checkpoint.bin");
    let (mut trainer, status) = if checkpoint.is_file() {
        let t = Trainer::load_state(&checkpoint)?;
        if t.config != train {
            return Err(Error::StateMismatch(format!(
                "{} belongs to another run",
                checkpoint.display()
            )));
        }
        (t, RunStatus::Resumed)
    } else {
        let fp = fingerprint_for(&train, &data, Some(run.fold));
        (Trainer::new(train, fp)?, RunStatus::Trained)
    };
    let log = run.dir.join("loss_log.txt");
    let result = trainer.run(&data, |t| {
        t.save_state(&checkpoint)?;
        write_text(&log, &format_loss_log(&t.trajectory))
    });
    if let Err(e) = result {
        if let Error::Diverged { .. } = e {
            write_text(&run.dir.join("DIVERGED"), &format!("{e}\n"))?;
            write_text(&log, &format_loss_log(&trainer.trajectory))?;
        }
        return Err(e);
    }
    trainer.bundle.save(&run.dir.join("model.bin"))?;
    Ok(status)
}

/// Runs every cell × fold × repeat, `jobs` at a time. Finished runs are
/// skipped; the first error stops scheduling new runs.
pub fn run_grid(
    exp: &Path,
    jobs: usize,
    mut progress: impl FnMut(&RunSpec, RunStatus) + Send,
) -> Result<Vec<(RunSpec, RunStatus)>> {
    let config = load_experiment(exp)?;
    config.validate()?;
    let (manifest, cohort) = store::read_cohort(&cohort_dir(exp))?;
    if manifest.config != config.cohort || manifest.folds.k != config.folds {
        return Err(Error::StateMismatch("cohort does not match experiment.json".into()));
    }
    let specs = run_specs(exp, &config);
    let next = AtomicUsize::new(0);
    let failed = Mutex::new(None::<Error>);
    let done = Mutex::new(Vec::new());
    let progress = Mutex::new(&mut progress);
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                if failed.lock().expect("lock").is_some() {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = specs.get(i) else { return };
                match execute_run(run, &config, &manifest, &cohort) {
                    Ok(status) => {
                        (progress.lock().expect("lock"))(run, status);
                        done.lock().expect("lock").push((i, status));
                    }
                    Err(e) => {
                        failed.lock().expect("lock").get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = failed.into_inner().expect("lock") {
        return Err(e);
    }
    let mut done = done.into_inner().expect("lock");
    done.sort_by_key(|(i, _)| *i);
    Ok(done.into_iter().map(|(i, st)| (specs[i].clone(), st)).collect())
}

fn held_out_pathological<'a>(cohort: &'a Cohort, manifest: &Manifest, fold: usize) -> Vec<&'a Slice> {
    cohort
        .slices
        .iter()
        .filter(|s| s.domain == Domain::PathologicalX && manifest.folds.fold_of(&s.patient_id) == Some(fold))
        .collect()
}

/// Scores one finished run on its held-out pathological slices.
pub fn evaluate_run(
    run: &RunSpec,
    config: &ExperimentConfig,
    manifest: &Manifest,
    cohort: &Cohort,
) -> Result<Vec<EvalRecord>> {
    let bundle = ModelBundle::load(&run.dir.join("model.bin"))?;
    if bundle.fingerprint.held_out_fold != Some(run.fold) {
        return Err(Error::Leakage(format!(
            "{} was trained with held-out fold {:?}",
            run.dir.display(),
            bundle.fingerprint.held_out_fold
        )));
    }
    let slices = held_out_pathological(cohort, manifest, run.fold);
    let evals = pseudo_healthy_eval(&bundle, &slices, config.levels)?;
    Ok(evals
        .into_iter()
        .map(|eval| EvalRecord {
            mode: run.cell.mode,
            w_c: run.cell.w_c,
            fold: run.fold,
            repeat: run.repeat,
            eval,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct EvalFile {
    model_sha256: String,
    records: Vec<EvalRecord>,
}

/// Evaluates every finished run whose scores are missing or stale and
/// returns all records in grid order. Unfinished runs are left out.
pub fn evaluate_all(exp: &Path) -> Result<Vec<EvalRecord>> {
    let config = load_experiment(exp)?;
    let (manifest, cohort) = store::read_cohort(&cohort_dir(exp))?;
    let mut all = Vec::new();
    for run in run_specs(exp, &config) {
        if !is_finished(&run) {
            continue;
        }
        let model = run.dir.join("model.bin");
        let digest = sha256_hex(&fs::read(&model).map_err(|e| Error::io(&model, e))?);
        let path = run.dir.join("eval.json");
        let cached = fs::read(&path)
            .ok()
            .and_then(|b| serde_json::from_slice::<EvalFile>(&b).ok())
            .filter(|f| f.model_sha256 == digest);
        let records = match cached {
            Some(f) => f.records,
            None => {
                let records = evaluate_run(&run, &config, &manifest, &cohort)?;
                let file = EvalFile {
                    model_sha256: digest,
                    records,
                };
                write_atomic(&path, &serde_json::to_vec(&file)?)?;
                file.records
            }
        };
        all.extend(records);
    }
    Ok(all)
}

/// [`evaluate_all`] plus `<exp>/eval/slices.csv`.
pub fn evaluate(exp: &Path) -> Result<Vec<EvalRecord>> {
    let records = evaluate_all(exp)?;
    write_text(&exp.join("eval").join("slices.csv"), &to_csv(&records))?;
    Ok(records)
}

pub fn grid_spec(config: &ExperimentConfig, manifest: &Manifest) -> GridSpec {
    let mut patients = BTreeMap::new();
    for e in &manifest.slices {
        if e.severity == Severity::Healthy {
            continue;
        }
        let fold = manifest.folds.fold_of(&e.patient_id).expect("every patient has a fold");
        patients
            .entry(e.patient_id.clone())
            .or_insert((e.severity, fold, 0usize))
            .2 += 1;
    }
    GridSpec {
        weights: config.weights(),
        folds: config.folds,
        repeats: config.repeats,
        patients,
    }
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub table: ReportTable,
    pub text: String,
    pub figures: Vec<PathBuf>,
}

/// Severe exemplars: the middle slice of the first `n` severe patients.
fn exemplar_slices<'a>(cohort: &'a Cohort, n: usize) -> Vec<&'a Slice> {
    let mut ids: Vec<&str> = cohort
        .slices
        .iter()
        .filter(|s| s.severity == Severity::Severe)
        .map(|s| s.patient_id.as_str())
        .collect();
    ids.dedup();
    let mid = cohort.config.slices_per_patient / 2;
    ids.into_iter()
        .take(n)
        .filter_map(|p| cohort.slices.iter().find(|s| s.patient_id == p && s.slice_index == mid))
        .collect()
}

struct Panel {
    image: Image,
    t_low: f64,
    t_high: f64,
}

fn panel(img: Image, slice: &Slice, levels: usize) -> Result<Panel> {
    let t = optimal_two_threshold(&img, &slice.gt_mask, levels)?;
    Ok(Panel {
        image: img,
        t_low: t.t_low,
        t_high: t.t_high,
    })
}

fn write_figures(exp: &Path, config: &ExperimentConfig, manifest: &Manifest, cohort: &Cohort) -> Result<Vec<PathBuf>> {
    let slices = exemplar_slices(cohort, config.exemplars);
    if slices.is_empty() {
        return Ok(Vec::new());
    }
    let dir = report_dir(exp).join("figures");
    let mut written = Vec::new();
    // translated panels per cell, computed with repeat 0 of each patient's fold
    let mut per_cell: BTreeMap<String, Vec<Panel>> = BTreeMap::new();
    let specs = run_specs(exp, config);
    for &cell in &config.cells {
        let mut panels = Vec::new();
        for s in &slices {
            let fold = manifest.folds.fold_of(&s.patient_id).expect("fold");
            let run = specs
                .iter()
                .find(|r| r.cell == cell && r.fold == fold && r.repeat == 0)
                .expect("grid contains every fold");
            let bundle = ModelBundle::load(&run.dir.join("model.bin"))?;
            panels.push(panel(bundle.to_healthy(&s.pixels)?, s, config.levels)?);
        }
        let rows: Vec<Exemplar> = slices
            .iter()
            .zip(&panels)
            .map(|(s, p)| Exemplar {
                original: &s.pixels,
                translated: &p.image,
                gt: &s.gt_mask,
                t_low: p.t_low,
                t_high: p.t_high,
            })
            .collect();
        let path = dir.join(format!("{}.png", cell.dir_name()));
        save_png(&sample_grid(&rows, config.levels)?, &path)?;
        written.push(path);
        per_cell.insert(cell.dir_name(), panels);
    }
    // side-by-side comparison per weight: original, symmetric, asymmetric,
    // each with its optimal band overlay
    let originals: Vec<Panel> = slices
        .iter()
        .map(|s| panel(s.pixels.clone(), s, config.levels))
        .collect::<Result<_>>()?;
    for w in config.weights() {
        let sym = &per_cell[&Cell {
            mode: crate::objectives::CycleMode::Symmetric,
            w_c: w,
        }
        .dir_name()];
        let asym = &per_cell[&Cell {
            mode: crate::objectives::CycleMode::Asymmetric,
            w_c: w,
        }
        .dir_name()];
        let mut canvas: Option<image::RgbImage> = None;
        for (i, s) in slices.iter().enumerate() {
            let strip: Vec<image::RgbImage> = [&originals[i], &sym[i], &asym[i]]
                .iter()
                .map(|p| {
                    let ex = Exemplar {
                        original: &p.image,
                        translated: &p.image,
                        gt: &s.gt_mask,
                        t_low: p.t_low,
                        t_high: p.t_high,
                    };
                    sample_grid(&[ex], config.levels)
                })
                .collect::<Result<_>>()?;
            canvas = Some(compose_comparison_row(canvas, &strip));
        }
        let path = dir.join(format!("comparison_wc{w}.png"));
        save_png(&canvas.expect("at least one exemplar"), &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Appends a row made of the overlay panel (third panel) of each strip.
fn compose_comparison_row(canvas: Option<image::RgbImage>, strips: &[image::RgbImage]) -> image::RgbImage {
    const GAP: u32 = 2;
    let (sw, h) = strips[0].dimensions();
    let panel_w = (sw - 2 * GAP) / 3;
    let width = strips.len() as u32 * panel_w + (strips.len() as u32 - 1) * GAP;
    let top = canvas.as_ref().map_or(0, |c| c.height() + GAP);
    let mut out = image::RgbImage::from_pixel(width, top + h, image::Rgb([255, 255, 255]));
    if let Some(c) = &canvas {
        image::imageops::replace(&mut out, c, 0, 0);
    }
    for (i, s) in strips.iter().enumerate() {
        let view = image::imageops::crop_imm(s, 2 * (panel_w + GAP), 0, panel_w, h).to_image();
        image::imageops::replace(&mut out, &view, (i as u32 * (panel_w + GAP)) as i64, top as i64);
    }
    out
}

/// Aggregates all evaluations into the comparison table and writes the
/// report files and sample grids. An incomplete grid writes only
/// `completeness.txt` and fails.
pub fn report(exp: &Path) -> Result<ReportOutput> {
    let config = load_experiment(exp)?;
    let (manifest, cohort) = store::read_cohort(&cohort_dir(exp))?;
    let records = evaluate_all(exp)?;
    let grid = grid_spec(&config, &manifest);
    let out_dir = report_dir(exp);
    let table = match aggregate_and_report(&records, &grid) {
        Ok(t) => t,
        Err(e @ Error::Incomplete { .. }) => {
            if let Error::Incomplete { report, .. } = &e {
                write_text(&out_dir.join("completeness.txt"), &format!("{report}\n"))?;
            }
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    let text = render_text(&table, false);
    write_text(&out_dir.join("report.txt"), &text)?;
    write_text(&out_dir.join("report.json"), &serde_json::to_string_pretty(&table)?)?;
    write_text(&out_dir.join("slices.csv"), &to_csv(&records))?;
    let stale = out_dir.join("completeness.txt");
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    let figures = write_figures(exp, &config, &manifest, &cohort)?;
    Ok(ReportOutput { table, text, figures })
}
