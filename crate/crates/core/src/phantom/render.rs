//! Per-patient anatomy and slice rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::grid::{Image, Mask};
use super::CohortConfig;

const HARMONICS: usize = 3;

/// Cross-section geometry of one patient's thigh, in pixel units relative to
/// the image size. `render` evaluates it at a relative slice position
/// `t in [0, 1]`; every parameter varies smoothly in `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Anatomy {
    size: f64,
    centre: (f64, f64),
    drift: (f64, f64),
    outer_radius: f64,
    aspect: f64,
    tilt: f64,
    taper: f64,
    /// `(amplitude, phase)` of radial harmonics 2..
    shape: [(f64, f64); HARMONICS],
    twist: f64,
    fat_thickness: f64,
    fat_bias: (f64, f64),
    bone_offset: (f64, f64),
    bone_radius: f64,
}

enum Tissue {
    Background,
    Fat,
    Muscle,
    Bone,
}

impl Anatomy {
    pub fn sample<R: Rng>(image_size: usize, rng: &mut R) -> Self {
        let s = image_size as f64;
        let mut shape = [(0.0, 0.0); HARMONICS];
        for h in &mut shape {
            *h = (rng.gen_range(0.0..0.04), rng.gen_range(0.0..std::f64::consts::TAU));
        }
        Self {
            size: s,
            centre: (
                s / 2.0 + rng.gen_range(-0.03..0.03) * s,
                s / 2.0 + rng.gen_range(-0.03..0.03) * s,
            ),
            drift: (rng.gen_range(-0.03..0.03) * s, rng.gen_range(-0.03..0.03) * s),
            outer_radius: rng.gen_range(0.38..0.44) * s,
            aspect: rng.gen_range(0.88..1.0),
            tilt: rng.gen_range(0.0..std::f64::consts::PI),
            taper: rng.gen_range(0.05..0.15),
            shape,
            twist: rng.gen_range(-0.3..0.3),
            fat_thickness: rng.gen_range(0.06..0.10) * s,
            fat_bias: (rng.gen_range(0.1..0.4), rng.gen_range(0.0..std::f64::consts::TAU)),
            bone_offset: (rng.gen_range(-0.06..0.06) * s, rng.gen_range(-0.06..0.06) * s),
            bone_radius: rng.gen_range(0.07..0.09) * s,
        }
    }

    fn classify(&self, t: f64, row: f64, col: f64) -> Tissue {
        let (cy, cx) = (self.centre.0 + self.drift.0 * t, self.centre.1 + self.drift.1 * t);
        let (dy, dx) = (row - cy, col - cx);
        // rotate into the ellipse frame
        let (ct, st) = (self.tilt.cos(), self.tilt.sin());
        let (u, v) = (dx * ct + dy * st, (-dx * st + dy * ct) / self.aspect);
        let r = (u * u + v * v).sqrt();
        let phi = v.atan2(u);
        let mut wobble = 1.0;
        for (k, &(amp, phase)) in self.shape.iter().enumerate() {
            wobble += amp * ((k as f64 + 2.0) * phi + phase + self.twist * t).cos();
        }
        let outer = self.outer_radius * (1.0 - self.taper * t) * wobble;
        let thickness = self.fat_thickness * (1.0 + self.fat_bias.0 * (phi - self.fat_bias.1).cos());
        let inner = outer - thickness;
        let bone_r = self.bone_radius * (1.0 + 0.1 * (std::f64::consts::PI * t).sin());
        let (by, bx) = (cy + self.bone_offset.0, cx + self.bone_offset.1);
        let bone_d = ((row - by).powi(2) + (col - bx).powi(2)).sqrt();
        if r > outer {
            Tissue::Background
        } else if r > inner {
            Tissue::Fat
        } else if bone_d <= bone_r {
            Tissue::Bone
        } else {
            Tissue::Muscle
        }
    }

    /// Renders intensities (blurred, noisy, clamped to `[0, 1]`) and the
    /// muscle-compartment mask at slice position `t`.
    pub fn render(&self, t: f64, config: &CohortConfig, noise_seed: u64) -> (Image, Mask) {
        let n = self.size as usize;
        let tissue = &config.tissue;
        let mut img = Image::new(n, n, 0.0);
        let mut mask = Mask::new(n, n, false);
        for row in 0..n {
            for col in 0..n {
                let (v, m) = match self.classify(t, row as f64 + 0.5, col as f64 + 0.5) {
                    Tissue::Background => (tissue.background, false),
                    Tissue::Fat => (tissue.subcutaneous_fat, false),
                    Tissue::Bone => (tissue.bone, false),
                    Tissue::Muscle => (tissue.muscle, true),
                };
                img.set(row, col, v as f32);
                mask.set(row, col, m);
            }
        }
        let mut img = gaussian_blur(&img, config.blur_sigma);
        if config.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let normal = Normal::new(0.0, config.noise_std).expect("finite std");
            for v in &mut img.data {
                *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        } else {
            img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        (img, mask)
    }
}

/// Separable Gaussian blur with edge clamping; `sigma == 0` is the identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (img.height as isize, img.width as isize);
    let pass = |src: &Image, horizontal: bool| -> Image {
        let mut out = src.clone();
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let d = i as isize - radius;
                    let (rr, cc) = if horizontal {
                        (r, (c + d).clamp(0, w - 1))
                    } else {
                        ((r + d).clamp(0, h - 1), c)
                    };
                    acc += k * *src.get(rr as usize, cc as usize) as f64;
                }
                out.set(r as usize, c as usize, acc as f32);
            }
        }
        out
    };
    pass(&pass(img, true), false)
}
