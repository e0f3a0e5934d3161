use serde::{Deserialize, Serialize};

use crate::archive::Arrays;
use crate::error::Result;
use crate::nets::layers::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam with bias correction, one instance per network. Moments are kept
/// in `f32` alongside the parameters; the update itself is evaluated in
/// `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub steps: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(hyper: AdamHyper, params: &[&Param<f32>]) -> Self {
        Self {
            hyper,
            steps: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param<f32>>) {
        debug_assert_eq!(params.len(), self.m.len());
        self.steps += 1;
        let AdamHyper {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.hyper;
        let c1 = 1.0 - b1.powi(self.steps.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.steps.min(i32::MAX as u64) as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * g;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
                p.value[i] = (p.value[i] as f64 - update) as f32;
            }
        }
    }

    pub fn export(&self, prefix: &str, params: &[&Param<f32>], out: &mut Arrays) {
        for ((p, m), v) in params.iter().zip(&self.m).zip(&self.v) {
            out.push(format!("{prefix}.m.{}", p.name), p.shape.clone(), m);
            out.push(format!("{prefix}.v.{}", p.name), p.shape.clone(), v);
        }
    }

    pub fn import(&mut self, prefix: &str, params: &[&Param<f32>], arrays: &Arrays) -> Result<()> {
        for ((p, m), v) in params.iter().zip(&mut self.m).zip(&mut self.v) {
            m.copy_from_slice(arrays.require(&format!("{prefix}.m.{}", p.name), &p.shape)?);
            v.copy_from_slice(arrays.require(&format!("{prefix}.v.{}", p.name), &p.shape)?);
        }
        Ok(())
    }
}
