//! Synthetic thigh-slice cohort with ground truth.
//!
//! Each patient gets a base anatomy (thigh cross-section with a subcutaneous
//! fat ring, muscle compartment and bone disc) that varies smoothly along the
//! slice axis. Healthy patients contribute slices of the healthy domain Y.
//! Pathological patients contribute slices of domain X, each produced by
//! [`pathologize`] from an internally rendered healthy twin: many pathological
//! slices can share one healthy counterpart, which is the many-to-one
//! structure the cycle losses are compared on. Twins are kept for oracles and
//! diagnostics and never enter training.

mod augment;
mod folds;
mod grid;
mod render;
pub mod store;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment, AugmentOp};
pub use folds::{make_folds, FoldPlan};
pub use grid::{Grid, Image, Mask};
pub use render::{gaussian_blur, Anatomy};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Domain {
    HealthyY,
    PathologicalX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Healthy,
    Moderate,
    Severe,
}

impl Severity {
    pub fn label(self) -> &'static str {
        match self {
            Severity::Healthy => "Healthy",
            Severity::Moderate => "Moderate",
            Severity::Severe => "Severe",
        }
    }

    fn id_prefix(self) -> char {
        match self {
            Severity::Healthy => 'H',
            Severity::Moderate => 'M',
            Severity::Severe => 'S',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub patient_id: String,
    pub slice_index: usize,
    pub domain: Domain,
    pub severity: Severity,
    pub pixels: Image,
    /// Muscle compartment including infiltrated tissue.
    pub gt_mask: Mask,
    pub infiltration_mask: Mask,
    pub healthy_twin_id: Option<String>,
}

impl Slice {
    pub fn id(&self) -> String {
        slice_id(&self.patient_id, self.slice_index)
    }

    /// Same permutation applied to pixels and both masks.
    pub fn augmented(&self, op: AugmentOp) -> Result<Slice> {
        Ok(Slice {
            pixels: augment(&self.pixels, op)?,
            gt_mask: augment(&self.gt_mask, op)?,
            infiltration_mask: augment(&self.infiltration_mask, op)?,
            ..self.clone()
        })
    }

    /// Checks the per-slice invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("slice {}: {m}", self.id())));
        if !self.pixels.same_shape(&self.gt_mask) || !self.pixels.same_shape(&self.infiltration_mask) {
            return bad("pixel and mask shapes differ".into());
        }
        if self.pixels.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensity outside [0, 1]".into());
        }
        if !self.infiltration_mask.is_subset_of(&self.gt_mask) {
            return bad("infiltration outside the muscle compartment".into());
        }
        let empty = self.infiltration_mask.count() == 0;
        let healthy_domain = self.domain == Domain::HealthyY;
        let healthy_severity = self.severity == Severity::Healthy;
        if healthy_domain != healthy_severity || (healthy_domain && !empty) {
            return bad(format!(
                "domain {:?}, severity {:?} and infiltration area {} disagree",
                self.domain,
                self.severity,
                self.infiltration_mask.count()
            ));
        }
        Ok(())
    }
}

pub fn slice_id(patient: &str, index: usize) -> String {
    format!("{patient}/{index:03}")
}

pub fn twin_id(patient: &str, index: usize) -> String {
    format!("{patient}/twin{index:03}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfiltrationProfile {
    /// Inclusive range of blob counts.
    pub blob_count: (usize, usize),
    /// Range of infiltrated fraction of the muscle compartment.
    pub area_fraction: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueIntensities {
    pub background: f64,
    pub bone: f64,
    pub muscle: f64,
    pub subcutaneous_fat: f64,
    pub infiltration: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            background: 0.05,
            bone: 0.15,
            muscle: 0.45,
            subcutaneous_fat: 0.90,
            infiltration: 0.88,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub image_size: usize,
    pub n_healthy_patients: usize,
    pub n_moderate_patients: usize,
    pub n_severe_patients: usize,
    pub slices_per_patient: usize,
    pub moderate: InfiltrationProfile,
    pub severe: InfiltrationProfile,
    pub tissue: TissueIntensities,
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub seed: u64,
}

/// Largest infiltrated fraction of the muscle compartment that blob
/// placement can reach reliably.
pub const MAX_AREA_FRACTION: f64 = 0.75;

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_healthy_patients: 21,
            n_moderate_patients: 7,
            n_severe_patients: 13,
            slices_per_patient: 10,
            moderate: InfiltrationProfile {
                blob_count: (1, 3),
                area_fraction: (0.05, 0.15),
            },
            severe: InfiltrationProfile {
                blob_count: (3, 6),
                area_fraction: (0.20, 0.40),
            },
            tissue: TissueIntensities::default(),
            blur_sigma: 1.0,
            noise_std: 0.02,
            seed: 7,
        }
    }
}

impl CohortConfig {
    pub fn profile(&self, severity: Severity) -> Option<&InfiltrationProfile> {
        match severity {
            Severity::Healthy => None,
            Severity::Moderate => Some(&self.moderate),
            Severity::Severe => Some(&self.severe),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.image_size < 32 {
            return cfg(format!("image_size {} < 32", self.image_size));
        }
        if self.slices_per_patient == 0 {
            return cfg("slices_per_patient must be positive".into());
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return cfg("noise_std must be >= 0".into());
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return cfg("blur_sigma must be >= 0".into());
        }
        let t = &self.tissue;
        let levels = [
            ("background", t.background),
            ("bone", t.bone),
            ("muscle", t.muscle),
            ("subcutaneous_fat", t.subcutaneous_fat),
            ("infiltration", t.infiltration),
        ];
        for (name, v) in levels {
            if !(0.0..=1.0).contains(&v) {
                return cfg(format!("{name} intensity {v} outside [0, 1]"));
            }
        }
        // Anatomical tissues must be separable from each other and infiltration
        // from muscle. Infiltration vs subcutaneous fat is deliberately allowed
        // to overlap: that overlap is what defeats plain thresholding.
        let gap = 3.0 * self.noise_std;
        let anatomical = &levels[..4];
        for (i, (na, a)) in anatomical.iter().enumerate() {
            for (nb, b) in &anatomical[i + 1..] {
                if (a - b).abs() < gap {
                    return cfg(format!("{na} and {nb} intensities closer than 3 noise std"));
                }
            }
        }
        if (t.infiltration - t.muscle).abs() < gap {
            return cfg("infiltration and muscle intensities closer than 3 noise std".into());
        }
        for (name, p) in [("moderate", &self.moderate), ("severe", &self.severe)] {
            let (lo, hi) = p.area_fraction;
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
                return cfg(format!("{name} area fraction range {lo}..{hi} is invalid"));
            }
            if hi > MAX_AREA_FRACTION {
                return Err(Error::Geometry(format!(
                    "{name} area fraction up to {hi} cannot fit inside the muscle compartment (max {MAX_AREA_FRACTION})"
                )));
            }
            if p.blob_count.0 > p.blob_count.1 || (hi > 0.0 && p.blob_count.0 == 0) {
                return cfg(format!("{name} blob count range {:?} is invalid", p.blob_count));
            }
        }
        if self.severe.area_fraction.0 <= self.moderate.area_fraction.1
            && (self.n_moderate_patients > 0 && self.n_severe_patients > 0)
        {
            return cfg("severe area fractions must lie strictly above the moderate range".into());
        }
        Ok(())
    }

    pub fn patient_ids(&self) -> Vec<(String, Severity)> {
        let mut v = Vec::new();
        for (sev, n) in [
            (Severity::Healthy, self.n_healthy_patients),
            (Severity::Moderate, self.n_moderate_patients),
            (Severity::Severe, self.n_severe_patients),
        ] {
            v.extend((0..n).map(|i| (format!("{}{i:02}", sev.id_prefix()), sev)));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    /// Training/evaluation slices of both domains.
    pub slices: Vec<Slice>,
    /// Healthy twins of the pathological slices; oracle-only.
    pub twins: Vec<Slice>,
}

impl Cohort {
    pub fn twin_of(&self, slice: &Slice) -> Option<&Slice> {
        let id = slice.healthy_twin_id.as_deref()?;
        self.twins
            .iter()
            .find(|t| t.patient_id == slice.patient_id && twin_id(&t.patient_id, t.slice_index) == id)
    }

    pub fn patients(&self) -> Vec<(String, Severity)> {
        let mut seen = std::collections::BTreeMap::new();
        for s in &self.slices {
            seen.entry(s.patient_id.clone()).or_insert(s.severity);
        }
        seen.into_iter().collect()
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &Slice> {
        self.slices.iter().filter(move |s| s.domain == domain)
    }
}

/// Renders the whole cohort. Patients draw from independent substreams
/// derived from `(seed, patient_id)`, so the result does not depend on
/// generation order.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let mut slices = Vec::new();
    let mut twins = Vec::new();
    for (pid, severity) in config.patient_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("patient/{pid}")));
        let anatomy = Anatomy::sample(config.image_size, &mut rng);
        for idx in 0..config.slices_per_patient {
            let t = if config.slices_per_patient > 1 {
                idx as f64 / (config.slices_per_patient - 1) as f64
            } else {
                0.0
            };
            let noise_seed: u64 = rng.gen();
            let (pixels, gt_mask) = anatomy.render(t, config, noise_seed);
            let healthy = Slice {
                patient_id: pid.clone(),
                slice_index: idx,
                domain: Domain::HealthyY,
                severity: Severity::Healthy,
                infiltration_mask: Mask::new(gt_mask.height, gt_mask.width, false),
                pixels,
                gt_mask,
                healthy_twin_id: None,
            };
            if severity == Severity::Healthy {
                slices.push(healthy);
            } else {
                let seed = derive_seed(config.seed, &format!("infiltration/{}", slice_id(&pid, idx)));
                let sick = pathologize(&healthy, severity, config, seed)?;
                twins.push(healthy);
                slices.push(sick);
            }
        }
    }
    Ok(Cohort {
        config: config.clone(),
        slices,
        twins,
    })
}

const PLACEMENT_RETRIES: usize = 200;

/// Adds smooth infiltration blobs inside the muscle compartment of a healthy
/// slice. Pixels outside the returned infiltration mask are untouched; inside
/// it they are raised towards the infiltration level.
pub fn pathologize(healthy: &Slice, severity: Severity, config: &CohortConfig, seed: u64) -> Result<Slice> {
    if healthy.domain != Domain::HealthyY {
        return Err(Error::Config(format!("{} is not a healthy slice", healthy.id())));
    }
    let profile = config
        .profile(severity)
        .ok_or_else(|| Error::Config("pathologize needs MODERATE or SEVERE".into()))?;
    let mut out = Slice {
        domain: Domain::PathologicalX,
        severity,
        healthy_twin_id: Some(twin_id(&healthy.patient_id, healthy.slice_index)),
        ..healthy.clone()
    };
    let (lo, hi) = profile.area_fraction;
    if hi <= 0.0 || profile.blob_count.1 == 0 {
        return Ok(out);
    }
    let muscle: Vec<usize> = (0..healthy.gt_mask.len())
        .filter(|&i| healthy.gt_mask.data[i])
        .collect();
    if muscle.is_empty() {
        return Err(Error::Geometry(format!("{} has no muscle compartment", healthy.id())));
    }
    let n = healthy.gt_mask.width;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PLACEMENT_RETRIES {
        let target = rng.gen_range(lo..=hi);
        let count = rng.gen_range(profile.blob_count.0..=profile.blob_count.1);
        let mut weight = vec![0.0f64; healthy.gt_mask.len()];
        for _ in 0..count {
            let centre = muscle[rng.gen_range(0..muscle.len())];
            let (cy, cx) = ((centre / n) as f64, (centre % n) as f64);
            let area = target * muscle.len() as f64 / count as f64 * rng.gen_range(0.6..1.4);
            let aspect: f64 = rng.gen_range(1.0..2.5);
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            // A Gaussian bump thresholded at 1/2 covers an ellipse of area
            // 2 ln 2 * pi * s1 * s2.
            let prod = area / (2.0 * std::f64::consts::LN_2 * std::f64::consts::PI);
            let (s1, s2) = ((prod * aspect).sqrt(), (prod / aspect).sqrt());
            let (ct, st) = (theta.cos(), theta.sin());
            let reach = (3.0 * s1).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (py, px) = (cy as isize + dy, cx as isize + dx);
                    if py < 0 || px < 0 || py >= n as isize || px >= n as isize {
                        continue;
                    }
                    let i = py as usize * n + px as usize;
                    if !healthy.gt_mask.data[i] {
                        continue;
                    }
                    let (u, v) = (dx as f64 * ct + dy as f64 * st, -(dx as f64) * st + dy as f64 * ct);
                    let bump = (-0.5 * ((u / s1).powi(2) + (v / s2).powi(2))).exp();
                    if bump > 0.5 {
                        // 0 at the blob rim, 1 from bump >= 0.75 inward.
                        let w = ((bump - 0.5) / 0.25).min(1.0);
                        let w = w * w * (3.0 - 2.0 * w);
                        weight[i] = weight[i].max(w);
                    }
                }
            }
        }
        let area = weight.iter().filter(|&&w| w > 0.0).count();
        let fraction = area as f64 / muscle.len() as f64;
        if area == 0 || fraction < lo || fraction > hi {
            continue;
        }
        let lift = config.tissue.infiltration - config.tissue.muscle;
        for (i, &w) in weight.iter().enumerate() {
            if w > 0.0 {
                out.infiltration_mask.data[i] = true;
                let v = healthy.pixels.data[i] as f64 + w * lift;
                out.pixels.data[i] = v.clamp(0.0, 1.0) as f32;
            }
        }
        return Ok(out);
    }
    Err(Error::Geometry(format!(
        "could not place {severity:?} infiltration covering {lo}..{hi} of {} muscle pixels in {PLACEMENT_RETRIES} attempts",
        muscle.len()
    )))
}
