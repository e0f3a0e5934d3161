//! Training objectives: least-squares adversarial terms, the symmetric and
//! asymmetric cycle-consistency terms, the identity term, and their weighted
//! composition.
//!
//! Batches are slices of per-sample tensors. Every L1/L2 mean runs over all
//! pixels of all samples in the batch. Each loss returns its value together
//! with the gradient with respect to the network outputs it consumes, so the
//! trainer can back-propagate without an autograd tape.
//!
//! Naming follows the translation directions: `F` maps the pathological
//! domain X onto the healthy domain Y, `G` maps Y back onto X.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CycleMode {
    /// Both reconstruction cycles, `y -> G -> F` and `x -> F -> G`.
    Symmetric,
    /// Only the `y -> G -> F` cycle, doubled.
    Asymmetric,
}

impl CycleMode {
    pub fn tag(self) -> &'static str {
        match self {
            CycleMode::Symmetric => "sym",
            CycleMode::Asymmetric => "asym",
        }
    }
}

impl std::fmt::Display for CycleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for CycleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sym" | "symmetric" => Ok(CycleMode::Symmetric),
            "asym" | "asymmetric" => Ok(CycleMode::Asymmetric),
            other => Err(Error::Config(format!("unknown cycle mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub cycle_mode: CycleMode,
    /// Cycle weight multiplier `w_c`.
    pub w_c: f64,
    pub gan_weight: f64,
    pub identity_weight: f64,
}

impl LossConfig {
    /// Identity weight tied to half the adversarial weight.
    pub fn new(cycle_mode: CycleMode, w_c: f64) -> Self {
        Self::with_gan_weight(cycle_mode, w_c, 1.0)
    }

    pub fn with_gan_weight(cycle_mode: CycleMode, w_c: f64, gan_weight: f64) -> Self {
        Self {
            cycle_mode,
            w_c,
            gan_weight,
            identity_weight: 0.5 * gan_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_c", self.w_c),
            ("gan_weight", self.gan_weight),
            ("identity_weight", self.identity_weight),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Scalar components of one generator/discriminator update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_f: f64,
    pub gan_g: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total_generators: f64,
    pub d_x: f64,
    pub d_y: f64,
}

/// Already-weighted cycle value tagged with the formulation that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CycleTerm {
    Symmetric(f64),
    Asymmetric(f64),
}

impl CycleTerm {
    pub fn mode(&self) -> CycleMode {
        match self {
            CycleTerm::Symmetric(_) => CycleMode::Symmetric,
            CycleTerm::Asymmetric(_) => CycleMode::Asymmetric,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            CycleTerm::Symmetric(v) | CycleTerm::Asymmetric(v) => v,
        }
    }
}

/// Inputs to [`total_generator_loss`]. `gan_f`/`gan_g` are unweighted,
/// `cycle` and `identity` carry their own weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTerms {
    pub gan_f: f64,
    pub gan_g: f64,
    pub cycle: CycleTerm,
    pub identity: f64,
}

/// Value of a loss and its gradient with respect to each prediction sample.
#[derive(Debug, Clone)]
pub struct Graded<T> {
    pub value: f64,
    pub grad: Vec<Tensor<T>>,
}

fn check_pair<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>], what: &str) -> Result<usize> {
    if pred.is_empty() {
        return Err(Error::Empty(format!("{what}: empty batch")));
    }
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{what}: batch sizes {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    let mut n = 0;
    for (p, t) in pred.iter().zip(target) {
        p.ensure_same_shape(t, what)?;
        n += p.len();
    }
    if n == 0 {
        return Err(Error::Empty(format!("{what}: zero-sized samples")));
    }
    Ok(n)
}

/// `mean |pred - target|` over batch and pixels, gradient scaled by `scale`.
pub fn l1_mean<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>], scale: f64) -> Result<Graded<T>> {
    let n = check_pair(pred, target, "l1")?;
    let step = T::of(scale / n as f64);
    let mut sum = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let mut g = Tensor::zeros(p.channels, p.height, p.width);
            for ((gv, &a), &b) in g.data.iter_mut().zip(&p.data).zip(&t.data) {
                let r = a - b;
                sum += r.to_f64().abs();
                *gv = if r > T::ZERO {
                    step
                } else if r < T::ZERO {
                    -step
                } else {
                    T::ZERO
                };
            }
            g
        })
        .collect();
    Ok(Graded {
        value: scale * (sum / n as f64),
        grad,
    })
}

/// `mean (pred - target)^2` over batch and pixels, gradient scaled by `scale`.
fn l2_mean<T: Real>(pred: &[Tensor<T>], target: f64, scale: f64, what: &str) -> Result<Graded<T>> {
    if pred.is_empty() {
        return Err(Error::Empty(format!("{what}: empty batch")));
    }
    let n: usize = pred.iter().map(|p| p.len()).sum();
    if n == 0 {
        return Err(Error::Empty(format!("{what}: zero-sized decision grids")));
    }
    let mut sum = 0.0;
    let k = 2.0 * scale / n as f64;
    let grad = pred
        .iter()
        .map(|p| {
            let mut g = Tensor::zeros(p.channels, p.height, p.width);
            for (gv, &a) in g.data.iter_mut().zip(&p.data) {
                let r = a.to_f64() - target;
                sum += r * r;
                *gv = T::of(k * r);
            }
            g
        })
        .collect();
    Ok(Graded {
        value: scale * sum / n as f64,
        grad,
    })
}

/// Symmetric cycle value and gradients for both reconstructions.
#[derive(Debug, Clone)]
pub struct SymmetricCycle<T> {
    pub value: f64,
    pub grad_recon_y: Vec<Tensor<T>>,
    pub grad_recon_x: Vec<Tensor<T>>,
}

/// `w_c * (mean|F(G(y)) - y| + mean|G(F(x)) - x|)`.
pub fn cycle_symmetric<T: Real>(
    recon_y: &[Tensor<T>],
    y: &[Tensor<T>],
    recon_x: &[Tensor<T>],
    x: &[Tensor<T>],
    w_c: f64,
) -> Result<SymmetricCycle<T>> {
    let ly = l1_mean(recon_y, y, w_c)?;
    let lx = l1_mean(recon_x, x, w_c)?;
    Ok(SymmetricCycle {
        value: ly.value + lx.value,
        grad_recon_y: ly.grad,
        grad_recon_x: lx.grad,
    })
}

/// `2 * w_c * mean|F(G(y)) - y|`. Takes no X-domain input at all.
pub fn cycle_asymmetric<T: Real>(recon_y: &[Tensor<T>], y: &[Tensor<T>], w_c: f64) -> Result<Graded<T>> {
    l1_mean(recon_y, y, 2.0 * w_c)
}

/// Least-squares generator criterion `mean (D(fake) - 1)^2`.
pub fn gan_loss_generator<T: Real>(fake_decisions: &[Tensor<T>]) -> Result<Graded<T>> {
    l2_mean(fake_decisions, 1.0, 1.0, "gan_loss_generator")
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss<T> {
    pub value: f64,
    pub grad_real: Vec<Tensor<T>>,
    pub grad_fake: Vec<Tensor<T>>,
}

/// `0.5 * (mean (D(real) - 1)^2 + mean D(fake)^2)`.
pub fn gan_loss_discriminator<T: Real>(
    real_decisions: &[Tensor<T>],
    fake_decisions: &[Tensor<T>],
) -> Result<DiscriminatorLoss<T>> {
    let r = l2_mean(real_decisions, 1.0, 0.5, "gan_loss_discriminator (real)")?;
    let f = l2_mean(fake_decisions, 0.0, 0.5, "gan_loss_discriminator (fake)")?;
    Ok(DiscriminatorLoss {
        value: r.value + f.value,
        grad_real: r.grad,
        grad_fake: f.grad,
    })
}

#[derive(Debug, Clone)]
pub struct IdentityLoss<T> {
    pub value: f64,
    pub grad_f_of_y: Vec<Tensor<T>>,
    pub grad_g_of_x: Vec<Tensor<T>>,
}

/// `identity_weight * (mean|F(y) - y| + mean|G(x) - x|)`.
pub fn identity_loss<T: Real>(
    f_of_y: &[Tensor<T>],
    y: &[Tensor<T>],
    g_of_x: &[Tensor<T>],
    x: &[Tensor<T>],
    identity_weight: f64,
) -> Result<IdentityLoss<T>> {
    let a = l1_mean(f_of_y, y, identity_weight)?;
    let b = l1_mean(g_of_x, x, identity_weight)?;
    Ok(IdentityLoss {
        value: a.value + b.value,
        grad_f_of_y: a.grad,
        grad_g_of_x: b.grad,
    })
}

/// Composes the generator objective
/// `gan_weight * (gan_F + gan_G) + cycle + identity`.
pub fn total_generator_loss(terms: &GeneratorTerms, config: &LossConfig) -> Result<LossBreakdown> {
    config.validate()?;
    if terms.cycle.mode() != config.cycle_mode {
        return Err(Error::Config(format!(
            "cycle term computed in {} mode but config asks for {}",
            terms.cycle.mode(),
            config.cycle_mode
        )));
    }
    let parts = [terms.gan_f, terms.gan_g, terms.cycle.value(), terms.identity];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("non-finite loss component in {parts:?}")));
    }
    let cycle = terms.cycle.value();
    Ok(LossBreakdown {
        gan_f: terms.gan_f,
        gan_g: terms.gan_g,
        cycle,
        identity: terms.identity,
        total_generators: config.gan_weight * (terms.gan_f + terms.gan_g) + cycle + terms.identity,
        d_x: 0.0,
        d_y: 0.0,
    })
}
