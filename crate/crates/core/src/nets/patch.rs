//! Patch-level discriminator: a stack of strided convolutions ending in a
//! one-channel grid of real-valued decisions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{conv_output_size, Activation, BlockCache, Conv2d, ConvBlock, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const KERNEL: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub image_size: usize,
    pub n_layers: usize,
    pub base_channels: usize,
    pub max_channel_multiplier: usize,
    pub init_std: f64,
}

impl DiscriminatorSpec {
    pub fn new(image_size: usize, n_layers: usize, base_channels: usize) -> Self {
        Self {
            image_size,
            n_layers,
            base_channels,
            max_channel_multiplier: 8,
            init_std: 0.02,
        }
    }

    fn channels(&self, layer: usize) -> usize {
        self.base_channels * (1usize << layer.min(30)).min(self.max_channel_multiplier)
    }

    /// Side length of the decision grid, `None` when the stride schedule
    /// collapses the map to nothing.
    pub fn decision_size(&self) -> Option<usize> {
        let mut s = self.image_size;
        for _ in 0..self.n_layers {
            s = conv_output_size(s, KERNEL, 2, 1)?;
            if s == 0 {
                return None;
            }
        }
        conv_output_size(s, KERNEL, 1, 1).filter(|&s| s > 0)
    }

    /// Receptive field (in input pixels) of one decision.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for _ in 0..self.n_layers {
            rf += (KERNEL - 1) * jump;
            jump *= 2;
        }
        rf + (KERNEL - 1) * jump
    }

    /// Whether each decision sees only part of the image.
    pub fn is_patch_level(&self) -> bool {
        self.receptive_field() < self.image_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::Config(format!(
                "discriminator needs at least 2 strided layers, got {}",
                self.n_layers
            )));
        }
        if self.base_channels == 0 || self.max_channel_multiplier == 0 {
            return Err(Error::Config("discriminator channel widths must be positive".into()));
        }
        if self.decision_size().is_none() {
            return Err(Error::Config(format!(
                "{} strided layers reduce a {}px image to an empty decision grid",
                self.n_layers, self.image_size
            )));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    pub spec: DiscriminatorSpec,
    blocks: Vec<ConvBlock<T>>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace<T> {
    blocks: Vec<BlockCache<T>>,
}

impl<T: Real> Discriminator<T> {
    pub fn build(spec: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = spec.init_std;
        let mut blocks = Vec::with_capacity(spec.n_layers + 1);
        let mut cin = 1;
        for l in 0..spec.n_layers {
            let cout = spec.channels(l);
            let norm = l > 0;
            blocks.push(ConvBlock {
                conv: Conv2d::new(
                    &format!("layer{}", l + 1),
                    cin,
                    cout,
                    KERNEL,
                    2,
                    1,
                    !norm,
                    std,
                    &mut rng,
                ),
                norm,
                act: Activation::LeakyRelu,
            });
            cin = cout;
        }
        blocks.push(ConvBlock {
            conv: Conv2d::new("decision", cin, 1, KERNEL, 1, 1, true, std, &mut rng),
            norm: false,
            act: Activation::None,
        });
        Ok(Self {
            spec: spec.clone(),
            blocks,
        })
    }

    pub fn decision_shape(&self) -> (usize, usize) {
        let s = self.spec.decision_size().expect("validated at build");
        (s, s)
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, DiscriminatorTrace<T>) {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let (y, c) = b.forward(&h);
            caches.push(c);
            h = y;
        }
        (h, DiscriminatorTrace { blocks: caches })
    }

    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward(x).0
    }

    pub fn backward(
        &mut self,
        trace: &DiscriminatorTrace<T>,
        dy: &Tensor<T>,
        accumulate: bool,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let mut g = dy.clone();
        for (i, (b, c)) in self.blocks.iter_mut().zip(&trace.blocks).enumerate().rev() {
            let need = i > 0 || need_input_grad;
            match b.backward(c, g, accumulate, need) {
                Some(next) => g = next,
                None => {
                    debug_assert!(i == 0 && !need_input_grad);
                    return None;
                }
            }
        }
        Some(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.blocks.iter().flat_map(|b| b.conv.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.blocks.iter_mut().flat_map(|b| b.conv.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_layers_on_64_gives_intermediate_grid() {
        let spec = DiscriminatorSpec::new(64, 3, 8);
        let d = Discriminator::<f32>::build(&spec, 0).unwrap();
        // 64 -> 32 -> 16 -> 8 (stride 2), then 8 -> 7 (k4 s1 p1)
        assert_eq!(d.decision_shape(), (7, 7));
        let y = d.apply(&Tensor::filled(1, 64, 64, 0.1));
        assert_eq!(y.shape(), (1, 7, 7));
        assert!(spec.is_patch_level());
        assert_eq!(spec.receptive_field(), 46);
    }

    #[test]
    fn rejects_single_layer_and_empty_grid() {
        assert!(Discriminator::<f32>::build(&DiscriminatorSpec::new(64, 1, 8), 0).is_err());
        // 8 -> 4 -> 2 -> 1 -> 0
        assert!(Discriminator::<f32>::build(&DiscriminatorSpec::new(8, 4, 2), 0).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_parameters() {
        let spec = DiscriminatorSpec::new(32, 2, 4);
        let a = Discriminator::<f32>::build(&spec, 9).unwrap();
        let b = Discriminator::<f32>::build(&spec, 9).unwrap();
        assert_eq!(a, b);
    }
}
