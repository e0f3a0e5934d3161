//! f64 probe networks and finite-difference checking for the losses.

use asymcycle::nets::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use asymcycle::objectives::{
    cycle_asymmetric, cycle_symmetric, gan_loss_discriminator, gan_loss_generator, identity_loss, CycleMode,
};
use asymcycle::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-6;

#[derive(Clone)]
pub struct Probe {
    pub f: Generator<f64>,
    pub g: Generator<f64>,
    pub d_x: Discriminator<f64>,
    pub d_y: Discriminator<f64>,
}

#[derive(Clone, Copy, PartialEq)]
pub enum Net {
    F,
    G,
    DX,
    DY,
}

impl Probe {
    pub fn new(seed: u64) -> Self {
        let gs = GeneratorSpec {
            max_channel_multiplier: 1,
            ..GeneratorSpec::new(8, 2, 1)
        };
        let ds = DiscriminatorSpec {
            max_channel_multiplier: 1,
            ..DiscriminatorSpec::new(8, 2, 1)
        };
        let mut p = Self {
            f: Generator::build(&gs, seed).unwrap(),
            g: Generator::build(&gs, seed + 1).unwrap(),
            d_x: Discriminator::build(&ds, seed + 2).unwrap(),
            d_y: Discriminator::build(&ds, seed + 3).unwrap(),
        };
        // zero biases put exact zeros on activation kinks (dead 1-channel
        // regions feed a conv whose output is then exactly its bias)
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for net in [Net::F, Net::G, Net::DX, Net::DY] {
            for v in p.values_mut(net) {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        p
    }

    pub fn count(&self) -> usize {
        self.f.parameter_count() + self.g.parameter_count() + self.d_x.parameter_count() + self.d_y.parameter_count()
    }

    pub fn zero_grad(&mut self) {
        self.f.zero_grad();
        self.g.zero_grad();
        self.d_x.zero_grad();
        self.d_y.zero_grad();
    }

    pub fn values_mut(&mut self, net: Net) -> Vec<&mut f64> {
        let params = match net {
            Net::F => self.f.params_mut(),
            Net::G => self.g.params_mut(),
            Net::DX => self.d_x.params_mut(),
            Net::DY => self.d_y.params_mut(),
        };
        params.into_iter().flat_map(|p| p.value.iter_mut()).collect()
    }

    pub fn grads(&self, net: Net) -> Vec<f64> {
        let params = match net {
            Net::F => self.f.params(),
            Net::G => self.g.params(),
            Net::DX => self.d_x.params(),
            Net::DY => self.d_y.params(),
        };
        params.into_iter().flat_map(|p| p.grad.iter().copied()).collect()
    }
}

pub fn image(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(1, 8, 8, (0..64).map(|_| rng.gen_range(-0.9..0.9)).collect()).unwrap()
}

/// A loss on the probe: forward value only, and value plus parameter
/// gradients left in the probe's grad buffers.
pub trait Objective {
    fn value(&self, p: &Probe) -> f64;
    fn backward(&self, p: &mut Probe);
}

pub fn numeric(obj: &dyn Objective, probe: &Probe, net: Net) -> Vec<f64> {
    let mut work = probe.clone();
    let n = work.values_mut(net).len();
    (0..n)
        .map(|i| {
            let orig = *work.values_mut(net)[i];
            *work.values_mut(net)[i] = orig + H;
            let up = obj.value(&work);
            *work.values_mut(net)[i] = orig - H;
            let down = obj.value(&work);
            *work.values_mut(net)[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Checks every listed network; returns the worst relative error.
pub fn check(obj: &dyn Objective, probe: &Probe, nets: &[Net]) -> f64 {
    let mut p = probe.clone();
    p.zero_grad();
    obj.backward(&mut p);
    let mut worst = 0.0f64;
    for &net in nets {
        let a = p.grads(net);
        assert!(a.iter().any(|v| *v != 0.0), "no gradient reached a network");
        worst = worst.max(rel_err(&a, &numeric(obj, probe, net)));
    }
    worst
}

pub struct Batch {
    pub x: Vec<Tensor<f64>>,
    pub y: Vec<Tensor<f64>>,
}

pub fn batch(seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        x: (0..2).map(|_| image(&mut rng)).collect(),
        y: (0..2).map(|_| image(&mut rng)).collect(),
    }
}

pub struct GanF<'a>(pub &'a Batch);

impl Objective for GanF<'_> {
    fn value(&self, p: &Probe) -> f64 {
        let d: Vec<_> = self.0.x.iter().map(|x| p.d_y.apply(&p.f.apply(x))).collect();
        gan_loss_generator(&d).unwrap().value
    }

    fn backward(&self, p: &mut Probe) {
        let fx: Vec<_> = self.0.x.iter().map(|x| p.f.forward(x)).collect();
        let d: Vec<_> = fx.iter().map(|(t, _)| p.d_y.forward(t)).collect();
        let outs: Vec<_> = d.iter().map(|(t, _)| t.clone()).collect();
        let l = gan_loss_generator(&outs).unwrap();
        for i in 0..fx.len() {
            let g = p.d_y.backward(&d[i].1, &l.grad[i], false, true).unwrap();
            p.f.backward(&fx[i].1, &g, true, false);
        }
    }
}

pub struct Cycle<'a>(pub &'a Batch, pub CycleMode, pub f64);

impl Objective for Cycle<'_> {
    fn value(&self, p: &Probe) -> f64 {
        let b = self.0;
        let rec_y: Vec<_> = b.y.iter().map(|y| p.f.apply(&p.g.apply(y))).collect();
        match self.1 {
            CycleMode::Asymmetric => cycle_asymmetric(&rec_y, &b.y, self.2).unwrap().value,
            CycleMode::Symmetric => {
                let rec_x: Vec<_> = b.x.iter().map(|x| p.g.apply(&p.f.apply(x))).collect();
                cycle_symmetric(&rec_y, &b.y, &rec_x, &b.x, self.2).unwrap().value
            }
        }
    }

    fn backward(&self, p: &mut Probe) {
        let b = self.0;
        let gy: Vec<_> = b.y.iter().map(|y| p.g.forward(y)).collect();
        let rec_y: Vec<_> = gy.iter().map(|(t, _)| p.f.forward(t)).collect();
        let rec_y_out: Vec<_> = rec_y.iter().map(|(t, _)| t.clone()).collect();
        let back_y = |p: &mut Probe, grad: &[Tensor<f64>]| {
            for i in 0..gy.len() {
                let g = p.f.backward(&rec_y[i].1, &grad[i], true, true).unwrap();
                p.g.backward(&gy[i].1, &g, true, false);
            }
        };
        match self.1 {
            CycleMode::Asymmetric => {
                let l = cycle_asymmetric(&rec_y_out, &b.y, self.2).unwrap();
                back_y(p, &l.grad);
            }
            CycleMode::Symmetric => {
                let fx: Vec<_> = b.x.iter().map(|x| p.f.forward(x)).collect();
                let rec_x: Vec<_> = fx.iter().map(|(t, _)| p.g.forward(t)).collect();
                let rec_x_out: Vec<_> = rec_x.iter().map(|(t, _)| t.clone()).collect();
                let l = cycle_symmetric(&rec_y_out, &b.y, &rec_x_out, &b.x, self.2).unwrap();
                back_y(p, &l.grad_recon_y);
                for i in 0..fx.len() {
                    let g = p.g.backward(&rec_x[i].1, &l.grad_recon_x[i], true, true).unwrap();
                    p.f.backward(&fx[i].1, &g, true, false);
                }
            }
        }
    }
}

pub struct Identity<'a>(pub &'a Batch);

impl Objective for Identity<'_> {
    fn value(&self, p: &Probe) -> f64 {
        let b = self.0;
        let fy: Vec<_> = b.y.iter().map(|y| p.f.apply(y)).collect();
        let gx: Vec<_> = b.x.iter().map(|x| p.g.apply(x)).collect();
        identity_loss(&fy, &b.y, &gx, &b.x, 0.5).unwrap().value
    }

    fn backward(&self, p: &mut Probe) {
        let b = self.0;
        let fy: Vec<_> = b.y.iter().map(|y| p.f.forward(y)).collect();
        let gx: Vec<_> = b.x.iter().map(|x| p.g.forward(x)).collect();
        let outs = |v: &[(Tensor<f64>, _)]| v.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
        let l = identity_loss(&outs(&fy), &b.y, &outs(&gx), &b.x, 0.5).unwrap();
        for i in 0..fy.len() {
            p.f.backward(&fy[i].1, &l.grad_f_of_y[i], true, false);
            p.g.backward(&gx[i].1, &l.grad_g_of_x[i], true, false);
        }
    }
}

/// Discriminator criterion on real X images against G(y) fakes.
pub struct Disc<'a>(pub &'a Batch);

impl Objective for Disc<'_> {
    fn value(&self, p: &Probe) -> f64 {
        let b = self.0;
        let real: Vec<_> = b.x.iter().map(|x| p.d_x.apply(x)).collect();
        let fake: Vec<_> = b.y.iter().map(|y| p.d_x.apply(&p.g.apply(y))).collect();
        gan_loss_discriminator(&real, &fake).unwrap().value
    }

    fn backward(&self, p: &mut Probe) {
        let b = self.0;
        let fakes: Vec<_> = b.y.iter().map(|y| p.g.apply(y)).collect();
        let real: Vec<_> = b.x.iter().map(|x| p.d_x.forward(x)).collect();
        let fake: Vec<_> = fakes.iter().map(|t| p.d_x.forward(t)).collect();
        let outs = |v: &[(Tensor<f64>, _)]| v.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>();
        let l = gan_loss_discriminator(&outs(&real), &outs(&fake)).unwrap();
        for i in 0..real.len() {
            p.d_x.backward(&real[i].1, &l.grad_real[i], true, false);
            p.d_x.backward(&fake[i].1, &l.grad_fake[i], true, false);
        }
    }
}

/// Weighted sum of the generator terms.
pub struct Total<'a>(pub &'a Batch, pub CycleMode);

impl Objective for Total<'_> {
    fn value(&self, p: &Probe) -> f64 {
        GanF(self.0).value(p) + Cycle(self.0, self.1, 0.5).value(p) + Identity(self.0).value(p)
    }

    fn backward(&self, p: &mut Probe) {
        GanF(self.0).backward(p);
        Cycle(self.0, self.1, 0.5).backward(p);
        Identity(self.0).backward(p);
    }
}

pub fn weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn dot(t: &Tensor<f64>, w: &[f64]) -> f64 {
    t.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Every objective on its own probe; returns (name, worst relative error).
pub fn all_checks() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let b = batch(10);
    out.push(("generator adversarial", check(&GanF(&b), &Probe::new(1), &[Net::F])));
    let b = batch(11);
    out.push((
        "symmetric cycle",
        check(&Cycle(&b, CycleMode::Symmetric, 0.5), &Probe::new(2), &[Net::F, Net::G]),
    ));
    let b = batch(12);
    out.push((
        "asymmetric cycle",
        check(
            &Cycle(&b, CycleMode::Asymmetric, 1.0),
            &Probe::new(3),
            &[Net::F, Net::G],
        ),
    ));
    let b = batch(13);
    out.push(("identity", check(&Identity(&b), &Probe::new(4), &[Net::F, Net::G])));
    let b = batch(14);
    out.push(("discriminator", check(&Disc(&b), &Probe::new(5), &[Net::DX])));
    let b = batch(15);
    out.push((
        "total (symmetric)",
        check(&Total(&b, CycleMode::Symmetric), &Probe::new(15), &[Net::F, Net::G]),
    ));
    let b = batch(16);
    out.push((
        "total (asymmetric)",
        check(&Total(&b, CycleMode::Asymmetric), &Probe::new(16), &[Net::F, Net::G]),
    ));
    out
}
