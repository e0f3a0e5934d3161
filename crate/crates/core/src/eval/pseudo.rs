use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{fat_fraction_marker, optimal_two_threshold};
use crate::error::{Error, Result};
use crate::nets::ModelBundle;
use crate::phantom::{Cohort, Image, Severity, Slice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Original,
    Translated,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Original => "ORIGINAL",
            Source::Translated => "TRANSLATED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEval {
    pub patient_id: String,
    pub slice_index: usize,
    pub severity: Severity,
    pub source: Source,
    pub t_low: f64,
    pub t_high: f64,
    pub dsc: f64,
    /// Fat-fraction marker of the translation; 0 for the original image.
    pub marker: f64,
}

/// Maps pathological slices to pseudo-healthy images and declares which
/// patients it may be scored on.
pub trait PseudoHealthy {
    fn heal(&self, slice: &Slice) -> Result<Image>;
    fn may_evaluate(&self, patient_id: &str) -> bool;
}

/// A trained bundle may only be scored on the patients it held out.
impl PseudoHealthy for ModelBundle {
    fn heal(&self, slice: &Slice) -> Result<Image> {
        self.to_healthy(&slice.pixels)
    }

    fn may_evaluate(&self, patient_id: &str) -> bool {
        self.fingerprint.held_out_fold.is_some() && self.fingerprint.held_out_patients.contains(patient_id)
    }
}

/// Returns the input unchanged.
pub struct IdentityHealer;

impl PseudoHealthy for IdentityHealer {
    fn heal(&self, slice: &Slice) -> Result<Image> {
        Ok(slice.pixels.clone())
    }

    fn may_evaluate(&self, _: &str) -> bool {
        true
    }
}

/// Returns the stored healthy twin: the ideal translation.
pub struct OracleHealer<'a>(pub &'a Cohort);

impl PseudoHealthy for OracleHealer<'_> {
    fn heal(&self, slice: &Slice) -> Result<Image> {
        match self.0.twin_of(slice) {
            Some(t) => Ok(t.pixels.clone()),
            None if slice.healthy_twin_id.is_none() => Ok(slice.pixels.clone()),
            None => Err(Error::Config(format!("twin of {} not in cohort", slice.id()))),
        }
    }

    fn may_evaluate(&self, _: &str) -> bool {
        true
    }
}

/// Scores every slice twice: the raw image (ORIGINAL) and its translation
/// (TRANSLATED). Refuses the whole batch if any slice belongs to a patient
/// the healer is not allowed to see.
pub fn pseudo_healthy_eval<H: PseudoHealthy + ?Sized>(
    healer: &H,
    slices: &[&Slice],
    levels: usize,
) -> Result<Vec<SliceEval>> {
    if let Some(s) = slices.iter().find(|s| !healer.may_evaluate(&s.patient_id)) {
        return Err(Error::Leakage(format!(
            "patient {} was not held out by this model",
            s.patient_id
        )));
    }
    let mut out = Vec::with_capacity(2 * slices.len());
    for s in slices {
        let healed = healer.heal(s)?;
        for (source, img, marker) in [
            (Source::Original, &s.pixels, 0.0),
            (Source::Translated, &healed, fat_fraction_marker(&s.pixels, &healed)?),
        ] {
            let t = optimal_two_threshold(img, &s.gt_mask, levels)?;
            out.push(SliceEval {
                patient_id: s.patient_id.clone(),
                slice_index: s.slice_index,
                severity: s.severity,
                source,
                t_low: t.t_low,
                t_high: t.t_high,
                dsc: t.dsc,
                marker,
            });
        }
    }
    Ok(out)
}
