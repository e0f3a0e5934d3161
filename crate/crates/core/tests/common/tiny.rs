use asymcycle::nets::{DiscriminatorSpec, GeneratorSpec};
use asymcycle::objectives::{CycleMode, LossConfig};
use asymcycle::phantom::{generate_cohort, make_folds, Cohort, CohortConfig, FoldPlan};
use asymcycle::train::{TrainConfig, TrainData};

pub const SIZE: usize = 32;

pub fn cohort_config(seed: u64) -> CohortConfig {
    CohortConfig {
        image_size: SIZE,
        n_healthy_patients: 3,
        n_moderate_patients: 2,
        n_severe_patients: 2,
        slices_per_patient: 3,
        seed,
        ..CohortConfig::default()
    }
}

pub fn cohort(seed: u64) -> (Cohort, FoldPlan) {
    let cohort = generate_cohort(&cohort_config(seed)).unwrap();
    let folds = make_folds(&cohort.patients(), 2, seed ^ 0xf01d).unwrap();
    (cohort, folds)
}

pub fn data(seed: u64) -> TrainData {
    let (cohort, folds) = cohort(seed);
    TrainData::from_cohort(&cohort, &folds, 0).unwrap()
}

pub fn train_config(mode: CycleMode, w_c: f64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(
        LossConfig::new(mode, w_c),
        GeneratorSpec::new(SIZE, 2, 2),
        DiscriminatorSpec::new(SIZE, 2, 2),
        seed,
    );
    c.epochs = 2;
    c.buffer_capacity = 4;
    c.learning_rate = 1e-3;
    c
}
