//! Unpaired adversarial training under either cycle formulation.

mod adam;
mod buffer;
mod loader;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamHyper};
pub use buffer::ImageBuffer;
pub use loader::{epoch_plan, iterations_per_epoch, Draw};

use crate::archive::{self, Arrays};
use crate::error::{Error, Result};
use crate::nets::{image_to_tensor, DiscriminatorSpec, Fingerprint, GeneratorSpec, ModelBundle, ModelSeeds};
use crate::objectives::{
    cycle_asymmetric, cycle_symmetric, gan_loss_discriminator, gan_loss_generator, identity_loss, total_generator_loss,
    CycleMode, CycleTerm, GeneratorTerms, LossBreakdown, LossConfig,
};
use crate::phantom::{augment, Cohort, Domain, FoldPlan, Image};
use crate::seed::{derive_seed, sha256_hex};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub buffer_capacity: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub augmentation: bool,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl TrainConfig {
    pub fn new(loss: LossConfig, generator: GeneratorSpec, discriminator: DiscriminatorSpec, seed: u64) -> Self {
        Self {
            epochs: 16,
            batch_size: 1,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            buffer_capacity: 50,
            loss,
            seed,
            augmentation: true,
            generator,
            discriminator,
        }
    }

    /// A zero learning rate is accepted so that a run can log losses with
    /// frozen parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        self.loss.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.image_size != self.discriminator.image_size {
            return bad("generator and discriminator image sizes differ");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Training images of both domains, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub x: Vec<Image>,
    pub x_ids: Vec<String>,
    pub y: Vec<Image>,
    pub y_ids: Vec<String>,
    pub held_out_patients: Vec<String>,
}

impl TrainData {
    /// Slices of patients outside `held_out_fold`. Healthy twins are never
    /// included.
    pub fn from_cohort(cohort: &Cohort, folds: &FoldPlan, held_out_fold: usize) -> Result<Self> {
        if held_out_fold >= folds.k {
            return Err(Error::Config(format!(
                "held-out fold {held_out_fold} outside [0, {})",
                folds.k
            )));
        }
        let mut data = TrainData {
            x: Vec::new(),
            x_ids: Vec::new(),
            y: Vec::new(),
            y_ids: Vec::new(),
            held_out_patients: folds.patients_in(held_out_fold).iter().map(|s| s.to_string()).collect(),
        };
        for s in &cohort.slices {
            let fold = folds
                .fold_of(&s.patient_id)
                .ok_or_else(|| Error::Config(format!("patient {} has no fold", s.patient_id)))?;
            if fold == held_out_fold {
                continue;
            }
            match s.domain {
                Domain::PathologicalX => {
                    data.x.push(s.pixels.clone());
                    data.x_ids.push(s.id());
                }
                Domain::HealthyY => {
                    data.y.push(s.pixels.clone());
                    data.y_ids.push(s.id());
                }
            }
        }
        data.check()?;
        Ok(data)
    }

    pub fn check(&self) -> Result<()> {
        if self.x.is_empty() || self.y.is_empty() {
            return Err(Error::Empty(format!(
                "training domains after fold removal: {} pathological, {} healthy slices",
                self.x.len(),
                self.y.len()
            )));
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub iteration: u64,
    pub epoch: usize,
    pub losses: LossBreakdown,
}

pub const LOSS_LOG_HEADER: &str = "# iteration epoch gan_f gan_g cycle identity total_generators d_x d_y";

/// Plain-text loss log; floats use the shortest representation that
/// parses back to the same value.
pub fn format_loss_log(rows: &[TrajectoryRow]) -> String {
    let mut s = String::from(LOSS_LOG_HEADER);
    s.push('\n');
    for r in rows {
        let l = &r.losses;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            r.iteration, r.epoch, l.gan_f, l.gan_g, l.cycle, l.identity, l.total_generators, l.d_x, l.d_y
        );
    }
    s
}

pub fn parse_loss_log(text: &str) -> Result<Vec<TrajectoryRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Config(format!("loss log line {}: cannot parse {line:?}", n + 1));
        if f.len() != 9 {
            return Err(bad());
        }
        let v = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        rows.push(TrajectoryRow {
            iteration: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            losses: LossBreakdown {
                gan_f: v(2)?,
                gan_g: v(3)?,
                cycle: v(4)?,
                identity: v(5)?,
                total_generators: v(6)?,
                d_x: v(7)?,
                d_y: v(8)?,
            },
        });
    }
    Ok(rows)
}

/// What one step fed the discriminators, for inspection.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    /// `G(y)`, fresh fakes of domain X.
    pub fresh_x: Vec<Tensor<f32>>,
    /// `F(x)`, fresh fakes of domain Y.
    pub fresh_y: Vec<Tensor<f32>>,
    pub shown_x: Vec<Tensor<f32>>,
    pub shown_y: Vec<Tensor<f32>>,
}

const F: usize = 0;
const G: usize = 1;
const DX: usize = 2;
const DY: usize = 3;

/// A training run in progress: networks, optimizer moments, image buffers,
/// random substreams and the loss trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    optimizers: [Adam; 4],
    buffer_x: ImageBuffer,
    buffer_y: ImageBuffer,
    loader_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    pending: VecDeque<Draw>,
    pub iteration: u64,
    pub epoch: usize,
    pub trajectory: Vec<TrajectoryRow>,
}

fn diverged(iteration: u64, what: &str, v: f64) -> Error {
    Error::Diverged {
        iteration,
        detail: format!("{what} = {v}"),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, fingerprint: Fingerprint) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::build(
            &config.generator,
            &config.discriminator,
            ModelSeeds::derive(config.seed),
            fingerprint,
        )?;
        let hyper = config.hyper();
        let optimizers = [
            Adam::new(hyper, &bundle.f.params()),
            Adam::new(hyper, &bundle.g.params()),
            Adam::new(hyper, &bundle.d_x.params()),
            Adam::new(hyper, &bundle.d_y.params()),
        ];
        Ok(Self {
            buffer_x: ImageBuffer::new(config.buffer_capacity),
            buffer_y: ImageBuffer::new(config.buffer_capacity),
            loader_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "loader")),
            buffer_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "buffer")),
            pending: VecDeque::new(),
            iteration: 0,
            epoch: 0,
            trajectory: Vec::new(),
            config,
            bundle,
            optimizers,
        })
    }

    pub fn buffers(&self) -> (&ImageBuffer, &ImageBuffer) {
        (&self.buffer_x, &self.buffer_y)
    }

    /// One generator update (F and G jointly), then D_X, then D_Y.
    /// Batches are normalized images of equal count.
    pub fn train_step(&mut self, x: &[Tensor<f32>], y: &[Tensor<f32>]) -> Result<StepOutput> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Shape(format!("batch sizes {} and {}", x.len(), y.len())));
        }
        let cfg = self.config.loss;
        let it = self.iteration;
        let b = &mut self.bundle;
        let n = x.len();
        let symmetric = cfg.cycle_mode == CycleMode::Symmetric;
        let with_identity = cfg.identity_weight != 0.0;

        let (fx, tr_fx): (Vec<_>, Vec<_>) = x.iter().map(|t| b.f.forward(t)).unzip();
        let (gy, tr_gy): (Vec<_>, Vec<_>) = y.iter().map(|t| b.g.forward(t)).unzip();
        let (d_fx, tr_d_fx): (Vec<_>, Vec<_>) = fx.iter().map(|t| b.d_y.forward(t)).unzip();
        let (d_gy, tr_d_gy): (Vec<_>, Vec<_>) = gy.iter().map(|t| b.d_x.forward(t)).unzip();
        let (rec_y, tr_rec_y): (Vec<_>, Vec<_>) = gy.iter().map(|t| b.f.forward(t)).unzip();
        // The X-cycle reconstruction exists only in the symmetric formulation.
        let (rec_x, tr_rec_x): (Vec<_>, Vec<_>) = if symmetric {
            fx.iter().map(|t| b.g.forward(t)).unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let (f_y, tr_f_y): (Vec<_>, Vec<_>) = if with_identity {
            y.iter().map(|t| b.f.forward(t)).unzip()
        } else {
            (Vec::new(), Vec::new())
        };
        let (g_x, tr_g_x): (Vec<_>, Vec<_>) = if with_identity {
            x.iter().map(|t| b.g.forward(t)).unzip()
        } else {
            (Vec::new(), Vec::new())
        };

        let gan_f = gan_loss_generator(&d_fx)?;
        let gan_g = gan_loss_generator(&d_gy)?;
        let (cycle, grad_rec_y, grad_rec_x) = if symmetric {
            let c = cycle_symmetric(&rec_y, y, &rec_x, x, cfg.w_c)?;
            (CycleTerm::Symmetric(c.value), c.grad_recon_y, Some(c.grad_recon_x))
        } else {
            let c = cycle_asymmetric(&rec_y, y, cfg.w_c)?;
            (CycleTerm::Asymmetric(c.value), c.grad, None)
        };
        let identity = if with_identity {
            Some(identity_loss(&f_y, y, &g_x, x, cfg.identity_weight)?)
        } else {
            None
        };
        let terms = GeneratorTerms {
            gan_f: gan_f.value,
            gan_g: gan_g.value,
            cycle,
            identity: identity.as_ref().map_or(0.0, |l| l.value),
        };
        for (what, v) in [
            ("gan_f", terms.gan_f),
            ("gan_g", terms.gan_g),
            ("cycle", cycle.value()),
            ("identity", terms.identity),
        ] {
            if !v.is_finite() {
                return Err(diverged(it, what, v));
            }
        }
        let mut losses = total_generator_loss(&terms, &cfg)?;

        b.f.zero_grad();
        b.g.zero_grad();
        let gw = cfg.gan_weight as f32;
        for i in 0..n {
            let mut g_fx = b
                .d_y
                .backward(&tr_d_fx[i], &gan_f.grad[i].map(|v| v * gw), false, true)
                .expect("input grad");
            let mut g_gy = b
                .d_x
                .backward(&tr_d_gy[i], &gan_g.grad[i].map(|v| v * gw), false, true)
                .expect("input grad");
            let g =
                b.f.backward(&tr_rec_y[i], &grad_rec_y[i], true, true)
                    .expect("input grad");
            g_gy.add_assign(&g);
            if let Some(grx) = &grad_rec_x {
                let g = b.g.backward(&tr_rec_x[i], &grx[i], true, true).expect("input grad");
                g_fx.add_assign(&g);
            }
            if let Some(id) = &identity {
                b.f.backward(&tr_f_y[i], &id.grad_f_of_y[i], true, false);
                b.g.backward(&tr_g_x[i], &id.grad_g_of_x[i], true, false);
            }
            b.f.backward(&tr_fx[i], &g_fx, true, false);
            b.g.backward(&tr_gy[i], &g_gy, true, false);
        }
        self.optimizers[F].step(b.f.params_mut());
        self.optimizers[G].step(b.g.params_mut());

        let (shown_x, _) = self.buffer_x.query(&gy, &mut self.buffer_rng);
        losses.d_x = discriminator_update(&mut b.d_x, &mut self.optimizers[DX], x, &shown_x)?;
        let (shown_y, _) = self.buffer_y.query(&fx, &mut self.buffer_rng);
        losses.d_y = discriminator_update(&mut b.d_y, &mut self.optimizers[DY], y, &shown_y)?;
        for (what, v) in [
            ("total_generators", losses.total_generators),
            ("d_x", losses.d_x),
            ("d_y", losses.d_y),
        ] {
            if !v.is_finite() {
                return Err(diverged(it, what, v));
            }
        }

        self.trajectory.push(TrajectoryRow {
            iteration: it,
            epoch: self.epoch,
            losses,
        });
        self.iteration += 1;
        Ok(StepOutput {
            losses,
            fresh_x: gy,
            fresh_y: fx,
            shown_x,
            shown_y,
        })
    }

    fn batch(
        images: &[Image],
        picks: impl Iterator<Item = (usize, crate::phantom::AugmentOp)>,
    ) -> Result<Vec<Tensor<f32>>> {
        picks
            .map(|(i, op)| Ok(image_to_tensor(&augment(&images[i], op)?)))
            .collect()
    }

    /// Runs up to `max_iterations` steps, crossing epoch boundaries as
    /// needed; stops early when the configured epoch count is reached.
    /// Returns the number of steps taken.
    pub fn run_iterations(&mut self, data: &TrainData, max_iterations: u64) -> Result<u64> {
        data.check()?;
        let mut done = 0;
        while done < max_iterations && self.epoch < self.config.epochs {
            if self.pending.is_empty() {
                self.pending = epoch_plan(
                    data.x.len(),
                    data.y.len(),
                    self.config.augmentation,
                    &mut self.loader_rng,
                )
                .into();
            }
            let take = self.config.batch_size.min(self.pending.len());
            let draws: Vec<Draw> = self.pending.drain(..take).collect();
            let xb = Self::batch(&data.x, draws.iter().map(|d| (d.x, d.x_op)))?;
            let yb = Self::batch(&data.y, draws.iter().map(|d| (d.y, d.y_op)))?;
            self.train_step(&xb, &yb)?;
            done += 1;
            if self.pending.is_empty() {
                self.epoch += 1;
            }
        }
        Ok(done)
    }

    /// Trains to the configured epoch count, calling `on_epoch` after each
    /// completed epoch (checkpointing hook).
    pub fn run(&mut self, data: &TrainData, mut on_epoch: impl FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let per_epoch = iterations_per_epoch(data.x.len(), data.y.len(), self.config.batch_size) as u64;
        while self.epoch < self.config.epochs {
            let start = self.epoch;
            self.run_iterations(data, per_epoch)?;
            // a resumed mid-epoch state finishes its epoch first
            while self.epoch == start {
                self.run_iterations(data, 1)?;
            }
            on_epoch(self)?;
        }
        Ok(())
    }

    fn to_archive(&self) -> (StateMeta, Arrays) {
        let mut arrays = self.bundle.to_arrays();
        let nets = [
            ("F", self.bundle.f.params()),
            ("G", self.bundle.g.params()),
            ("D_X", self.bundle.d_x.params()),
            ("D_Y", self.bundle.d_y.params()),
        ];
        for ((name, params), opt) in nets.iter().zip(&self.optimizers) {
            opt.export(&format!("adam.{name}"), params, &mut arrays);
        }
        for (tag, buf) in [("buffer_x", &self.buffer_x), ("buffer_y", &self.buffer_y)] {
            for (i, img) in buf.images.iter().enumerate() {
                arrays.push(
                    format!("{tag}.{i}"),
                    vec![img.channels, img.height, img.width],
                    &img.data,
                );
            }
        }
        let meta = StateMeta {
            config: self.config.clone(),
            fingerprint: self.bundle.fingerprint.clone(),
            iteration: self.iteration,
            epoch: self.epoch,
            adam_steps: [0, 1, 2, 3].map(|i| self.optimizers[i].steps),
            buffer_lens: [self.buffer_x.len(), self.buffer_y.len()],
            loader_rng: self.loader_rng.clone(),
            buffer_rng: self.buffer_rng.clone(),
            pending: self.pending.iter().copied().collect(),
            trajectory: self.trajectory.clone(),
        };
        (meta, arrays)
    }

    /// Full training state, sufficient to continue the run bit-exactly.
    pub fn save_state(&self, path: &Path) -> Result<()> {
        let (meta, arrays) = self.to_archive();
        archive::write(path, &meta, &arrays)
    }

    pub fn state_bytes(&self) -> Result<Vec<u8>> {
        let (meta, arrays) = self.to_archive();
        archive::encode(&meta, &arrays)
    }

    pub fn load_state(path: &Path) -> Result<Self> {
        let (meta, arrays) = archive::read::<StateMeta>(path)?;
        let mut t = Trainer::new(meta.config.clone(), meta.fingerprint.clone())?;
        t.bundle.load_arrays(&arrays)?;
        let nets = [
            ("F", t.bundle.f.params()),
            ("G", t.bundle.g.params()),
            ("D_X", t.bundle.d_x.params()),
            ("D_Y", t.bundle.d_y.params()),
        ];
        for (i, (name, params)) in nets.iter().enumerate() {
            t.optimizers[i].import(&format!("adam.{name}"), params, &arrays)?;
            t.optimizers[i].steps = meta.adam_steps[i];
        }
        let s = t.config.generator.image_size;
        for (k, (tag, buf)) in [("buffer_x", &mut t.buffer_x), ("buffer_y", &mut t.buffer_y)]
            .into_iter()
            .enumerate()
        {
            for i in 0..meta.buffer_lens[k] {
                let v = arrays.require(&format!("{tag}.{i}"), &[1, s, s])?;
                buf.images.push(Tensor::from_vec(1, s, s, v.to_vec())?);
            }
        }
        t.loader_rng = meta.loader_rng;
        t.buffer_rng = meta.buffer_rng;
        t.pending = meta.pending.into();
        t.iteration = meta.iteration;
        t.epoch = meta.epoch;
        t.trajectory = meta.trajectory;
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    config: TrainConfig,
    fingerprint: Fingerprint,
    iteration: u64,
    epoch: usize,
    adam_steps: [u64; 4],
    buffer_lens: [usize; 2],
    loader_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    pending: Vec<Draw>,
    trajectory: Vec<TrajectoryRow>,
}

fn discriminator_update(
    d: &mut crate::nets::Discriminator<f32>,
    opt: &mut Adam,
    real: &[Tensor<f32>],
    fake: &[Tensor<f32>],
) -> Result<f64> {
    let (r, tr_r): (Vec<_>, Vec<_>) = real.iter().map(|t| d.forward(t)).unzip();
    let (f, tr_f): (Vec<_>, Vec<_>) = fake.iter().map(|t| d.forward(t)).unzip();
    let loss = gan_loss_discriminator(&r, &f)?;
    d.zero_grad();
    for (tr, g) in tr_r.iter().zip(&loss.grad_real).chain(tr_f.iter().zip(&loss.grad_fake)) {
        d.backward(tr, g, true, false);
    }
    opt.step(d.params_mut());
    Ok(loss.value)
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: ModelBundle,
    pub trajectory: Vec<TrajectoryRow>,
}

pub fn fingerprint_for(config: &TrainConfig, data: &TrainData, held_out_fold: Option<usize>) -> Fingerprint {
    Fingerprint {
        seed: config.seed,
        config_hash: config.hash(),
        held_out_fold,
        held_out_patients: data.held_out_patients.iter().cloned().collect(),
    }
}

/// Trains on every patient outside `held_out_fold`.
pub fn train_run(
    cohort: &Cohort,
    folds: &FoldPlan,
    held_out_fold: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let data = TrainData::from_cohort(cohort, folds, held_out_fold)?;
    let mut trainer = Trainer::new(config.clone(), fingerprint_for(config, &data, Some(held_out_fold)))?;
    trainer.run(&data, |_| Ok(()))?;
    Ok(TrainOutcome {
        bundle: trainer.bundle,
        trajectory: trainer.trajectory,
    })
}
