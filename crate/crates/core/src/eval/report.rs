//! Patient-level aggregation and the comparison table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pseudo::{SliceEval, Source};
use super::wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};
use crate::error::{Error, Result};
use crate::objectives::CycleMode;
use crate::phantom::Severity;

/// One scored slice of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub mode: CycleMode,
    pub w_c: f64,
    pub fold: usize,
    pub repeat: usize,
    #[serde(flatten)]
    pub eval: SliceEval,
}

pub const CSV_HEADER: &str = "patient,slice,method,w_c,fold,repeat,source,t_low,t_high,dsc,marker";

/// Method label of a record: the original image or the cycle formulation
/// that produced the translation.
pub fn method_of(r: &EvalRecord) -> &'static str {
    match r.eval.source {
        Source::Original => "original",
        Source::Translated => r.mode.tag(),
    }
}

pub fn to_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let e = &r.eval;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.patient_id,
            e.slice_index,
            method_of(r),
            r.w_c,
            r.fold,
            r.repeat,
            e.source,
            e.t_low,
            e.t_high,
            e.dsc,
            e.marker
        );
    }
    s
}

/// The grid a report must cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub weights: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    /// Pathological patient -> (severity, fold, slice count).
    pub patients: BTreeMap<String, (Severity, usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation across patients (0 for one patient).
    pub std: f64,
}

/// Mean shifted by the first value, so a constant sequence averages to
/// exactly that constant.
fn mean(values: &[f64]) -> f64 {
    let first = values[0];
    first + values.iter().map(|v| v - first).sum::<f64>() / values.len() as f64
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = mean(values);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub severity: Severity,
    pub method: String,
    pub w_c: f64,
    /// Per-repeat means over the patient's slices.
    pub per_repeat: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub data_set: String,
    pub w_c: f64,
    pub n_patients: usize,
    pub original: Stat,
    pub symmetric: Stat,
    pub asymmetric: Stat,
    /// Asymmetric vs symmetric on paired per-patient scores.
    pub test: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
    pub patients: Vec<PatientScore>,
}

pub const DATA_SETS: [&str; 3] = ["Moderate", "Severe", "Pathological"];

fn in_data_set(set: &str, sev: Severity) -> bool {
    match set {
        "Moderate" => sev == Severity::Moderate,
        "Severe" => sev == Severity::Severe,
        _ => sev != Severity::Healthy,
    }
}

/// Key of a (method, weight) cell; weights compare by bit pattern.
type CellKey = (String, u64);

/// Lists every run/slice combination the grid requires but `records` lacks.
pub fn missing_cells(records: &[EvalRecord], grid: &GridSpec) -> Vec<String> {
    let mut have: BTreeMap<(CycleMode, u64, usize, usize), BTreeSet<(String, usize, Source)>> = BTreeMap::new();
    for r in records {
        have.entry((r.mode, r.w_c.to_bits(), r.fold, r.repeat))
            .or_default()
            .insert((r.eval.patient_id.clone(), r.eval.slice_index, r.eval.source));
    }
    let mut missing = Vec::new();
    for mode in [CycleMode::Symmetric, CycleMode::Asymmetric] {
        for &w in &grid.weights {
            for fold in 0..grid.folds {
                for repeat in 0..grid.repeats {
                    let cell = format!("{mode} w_c={w} fold={fold} repeat={repeat}");
                    let Some(got) = have.get(&(mode, w.to_bits(), fold, repeat)) else {
                        missing.push(format!("{cell}: no evaluation"));
                        continue;
                    };
                    let mut lacking = 0;
                    for (pid, &(_, f, n)) in &grid.patients {
                        if f != fold {
                            continue;
                        }
                        for s in 0..n {
                            for src in [Source::Original, Source::Translated] {
                                lacking += !got.contains(&(pid.clone(), s, src)) as usize;
                            }
                        }
                    }
                    if lacking > 0 {
                        missing.push(format!("{cell}: {lacking} slice score(s) missing"));
                    }
                }
            }
        }
    }
    missing
}

/// Per-patient scores (mean over slices within a repeat, then over repeats),
/// per-set mean ± std across patients, and a paired Wilcoxon test of the
/// asymmetric against the symmetric per-patient scores at each weight.
/// The merged set is computed from the union of patients.
pub fn aggregate_and_report(records: &[EvalRecord], grid: &GridSpec) -> Result<ReportTable> {
    let missing = missing_cells(records, grid);
    if !missing.is_empty() {
        return Err(Error::Incomplete {
            missing: missing.len(),
            report: missing.join("\n"),
        });
    }
    // (method, w_c) -> patient -> repeat -> slice scores
    let mut acc: BTreeMap<CellKey, BTreeMap<String, BTreeMap<usize, Vec<f64>>>> = BTreeMap::new();
    for r in records {
        if !grid.patients.contains_key(&r.eval.patient_id)
            || !grid.weights.iter().any(|w| w.to_bits() == r.w_c.to_bits())
        {
            continue;
        }
        acc.entry((method_of(r).to_string(), r.w_c.to_bits()))
            .or_default()
            .entry(r.eval.patient_id.clone())
            .or_default()
            .entry(r.repeat)
            .or_default()
            .push(r.eval.dsc);
    }
    let mut patients = Vec::new();
    let mut score: BTreeMap<CellKey, BTreeMap<String, f64>> = BTreeMap::new();
    for ((method, wbits), per_patient) in &acc {
        for (pid, per_repeat) in per_patient {
            let reps: Vec<f64> = per_repeat.values().map(|v| mean(v)).collect();
            let mean = mean(&reps);
            score
                .entry((method.clone(), *wbits))
                .or_default()
                .insert(pid.clone(), mean);
            patients.push(PatientScore {
                patient_id: pid.clone(),
                severity: grid.patients[pid].0,
                method: method.clone(),
                w_c: f64::from_bits(*wbits),
                per_repeat: reps,
                mean,
            });
        }
    }
    let mut rows = Vec::new();
    for set in DATA_SETS {
        let ids: Vec<&String> = grid
            .patients
            .iter()
            .filter(|(_, (sev, _, _))| in_data_set(set, *sev))
            .map(|(p, _)| p)
            .collect();
        if ids.is_empty() {
            continue;
        }
        for &w in &grid.weights {
            let column = |method: &str| -> Vec<f64> {
                let m = &score[&(method.to_string(), w.to_bits())];
                ids.iter().map(|p| m[*p]).collect()
            };
            let (orig, sym, asym) = (column("original"), column("sym"), column("asym"));
            rows.push(ReportRow {
                data_set: set.to_string(),
                w_c: w,
                n_patients: ids.len(),
                original: Stat::of(&orig),
                symmetric: Stat::of(&sym),
                asymmetric: Stat::of(&asym),
                test: wilcoxon_signed_rank(&asym, &sym)?,
            });
        }
    }
    Ok(ReportTable { rows, patients })
}

/// Significance band of a p-value, with its ANSI colour.
fn band(p: f64) -> &'static str {
    if p <= 0.01 {
        "\x1b[32m"
    } else if p <= 0.05 {
        "\x1b[33m"
    } else {
        "\x1b[31m"
    }
}

fn fmt_p(p: f64) -> String {
    if p > 0.05 {
        format!(">0.05 ({p:.4})")
    } else {
        format!("{p:.4}")
    }
}

/// Aligned text rendering. `color` wraps the p-value cells in ANSI colours
/// by band: `p > 0.05`, `0.01 < p <= 0.05`, `p <= 0.01`.
pub fn render_text(table: &ReportTable, color: bool) -> String {
    let header = [
        "Data set",
        "n",
        "w_c",
        "Original data",
        "L_C (sym)",
        "L_AC (asym)",
        "p one-sided",
        "p two-sided",
    ];
    let mut cells: Vec<[String; 8]> = Vec::new();
    for r in &table.rows {
        let st = |s: &Stat| format!("{:.3} ± {:.3}", s.mean, s.std);
        cells.push([
            r.data_set.clone(),
            r.n_patients.to_string(),
            format!("{}", r.w_c),
            st(&r.original),
            st(&r.symmetric),
            st(&r.asymmetric),
            fmt_p(r.test.p_greater),
            fmt_p(r.test.p_two_sided),
        ]);
    }
    let mut width = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in width.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let mut out = String::new();
    let line: Vec<String> = header.iter().zip(&width).map(|(h, &w)| pad(h, w)).collect();
    let _ = writeln!(out, "{}", line.join("  ").trim_end());
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1))
    );
    for (row, r) in cells.iter().zip(&table.rows) {
        let mut parts = Vec::new();
        for (i, (c, &w)) in row.iter().zip(&width).enumerate() {
            let padded = pad(c, w);
            let p = match i {
                6 => Some(r.test.p_greater),
                7 => Some(r.test.p_two_sided),
                _ => None,
            };
            match p {
                Some(p) if color => parts.push(format!("{}{padded}\x1b[0m", band(p))),
                _ => parts.push(padded),
            }
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    }
    out
}
