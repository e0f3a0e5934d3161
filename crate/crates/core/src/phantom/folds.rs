//! Patient-level, severity-stratified k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Severity;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.assignment.get(patient).copied()
    }

    pub fn patients_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Strata are processed in severity order (moderate, severe, healthy); each
/// stratum is shuffled and dealt round-robin, continuing from the fold where
/// the previous stratum stopped, so both per-stratum and overall fold sizes
/// differ by at most one.
pub fn make_folds(patients: &[(String, Severity)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k = {k}: at least two folds are needed")));
    }
    let mut strata: BTreeMap<Severity, Vec<&str>> = BTreeMap::new();
    for (id, sev) in patients {
        strata.entry(*sev).or_default().push(id.as_str());
    }
    for (sev, ids) in &strata {
        if ids.len() < k {
            return Err(Error::TooFewPatients(format!(
                "{} {sev:?} patients cannot fill {k} folds",
                ids.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut next = 0;
    for sev in [Severity::Moderate, Severity::Severe, Severity::Healthy] {
        let Some(ids) = strata.get(&sev) else { continue };
        let mut ids = ids.clone();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids {
            if assignment.insert(id.to_string(), next).is_some() {
                return Err(Error::Config(format!("patient {id} listed twice")));
            }
            next = (next + 1) % k;
        }
    }
    Ok(FoldPlan { k, assignment })
}
