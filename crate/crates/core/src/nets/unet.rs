//! U-shaped encoder/decoder generator with a skip connection at every level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{upsample2_backward, upsample2_forward, Activation, BlockCache, Conv2d, ConvBlock, Param};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Largest value below 1 representable in `f32`; generator outputs are kept
/// strictly inside the open interval even where `tanh` rounds to 1.
pub const OUTPUT_BOUND: f64 = 1.0 - 1.0 / 16_777_216.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NormKind {
    Instance,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutputActivation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub image_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub norm: NormKind,
    pub output_activation: OutputActivation,
    /// Channel widths stop doubling at `base_channels * max_channel_multiplier`.
    pub max_channel_multiplier: usize,
    pub init_std: f64,
}

impl GeneratorSpec {
    pub fn new(image_size: usize, depth: usize, base_channels: usize) -> Self {
        Self {
            image_size,
            depth,
            base_channels,
            norm: NormKind::Instance,
            output_activation: OutputActivation::Tanh,
            max_channel_multiplier: 8,
            init_std: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config(format!("generator depth {} < 2", self.depth)));
        }
        if self.base_channels == 0 || self.max_channel_multiplier == 0 {
            return Err(Error::Config("generator channel widths must be positive".into()));
        }
        let factor = 1usize
            .checked_shl(self.depth as u32)
            .filter(|f| *f <= self.image_size)
            .ok_or_else(|| Error::Config(format!("2^{} exceeds image size {}", self.depth, self.image_size)))?;
        if self.image_size % factor != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by 2^{}",
                self.image_size, self.depth
            )));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    /// Channels at encoder level `level` (0 = full resolution).
    pub fn channels(&self, level: usize) -> usize {
        let mult = (1usize << level.min(30)).min(self.max_channel_multiplier);
        self.base_channels * mult
    }

    pub fn bottleneck_size(&self) -> usize {
        self.image_size >> self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    inc: ConvBlock<T>,
    down: Vec<ConvBlock<T>>,
    up: Vec<ConvBlock<T>>,
    fuse: Vec<ConvBlock<T>>,
    out: ConvBlock<T>,
}

/// Everything [`Generator::backward`] needs from one forward application.
#[derive(Debug, Clone)]
pub struct GeneratorTrace<T> {
    inc: BlockCache<T>,
    down: Vec<BlockCache<T>>,
    up: Vec<BlockCache<T>>,
    fuse: Vec<BlockCache<T>>,
    out: BlockCache<T>,
    /// Per-level shapes `(c, h, w)` of encoder outputs, recorded for checks.
    pub encoder_shapes: Vec<(usize, usize, usize)>,
}

impl<T: Real> Generator<T> {
    pub fn build(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = spec.init_std;
        let norm = spec.norm == NormKind::Instance;
        let c0 = spec.channels(0);
        let inc = ConvBlock {
            conv: Conv2d::new("inc", 1, c0, 3, 1, 1, true, std, &mut rng),
            norm: false,
            act: Activation::LeakyRelu,
        };
        let down = (1..=spec.depth)
            .map(|l| ConvBlock {
                conv: Conv2d::new(
                    &format!("down{l}"),
                    spec.channels(l - 1),
                    spec.channels(l),
                    4,
                    2,
                    1,
                    !norm,
                    std,
                    &mut rng,
                ),
                norm,
                act: Activation::LeakyRelu,
            })
            .collect();
        let up = (1..=spec.depth)
            .map(|l| ConvBlock {
                conv: Conv2d::new(
                    &format!("up{l}"),
                    spec.channels(l),
                    spec.channels(l - 1),
                    3,
                    1,
                    1,
                    !norm,
                    std,
                    &mut rng,
                ),
                norm,
                act: Activation::Relu,
            })
            .collect();
        let fuse = (1..=spec.depth)
            .map(|l| ConvBlock {
                conv: Conv2d::new(
                    &format!("fuse{l}"),
                    2 * spec.channels(l - 1),
                    spec.channels(l - 1),
                    3,
                    1,
                    1,
                    !norm,
                    std,
                    &mut rng,
                ),
                norm,
                act: Activation::Relu,
            })
            .collect();
        let out = ConvBlock {
            conv: Conv2d::new("out", c0, 1, 1, 1, 0, true, std, &mut rng),
            norm: false,
            act: match spec.output_activation {
                OutputActivation::Tanh => Activation::Tanh,
            },
        };
        Ok(Self {
            spec: spec.clone(),
            inc,
            down,
            up,
            fuse,
            out,
        })
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.spec.image_size;
        if x.shape() != (1, s, s) {
            return Err(Error::Shape(format!(
                "generator expects 1x{s}x{s}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, GeneratorTrace<T>) {
        let depth = self.spec.depth;
        let (e0, inc) = self.inc.forward(x);
        let mut enc = vec![e0];
        let mut down = Vec::with_capacity(depth);
        for block in &self.down {
            let (e, c) = block.forward(enc.last().expect("non-empty"));
            enc.push(e);
            down.push(c);
        }
        let encoder_shapes = enc.iter().map(|e| e.shape()).collect();
        let mut up: Vec<Option<BlockCache<T>>> = vec![None; depth];
        let mut fuse: Vec<Option<BlockCache<T>>> = vec![None; depth];
        let mut h = enc.pop().expect("bottleneck");
        for l in (1..=depth).rev() {
            let (u, uc) = self.up[l - 1].forward(&h);
            let u = upsample2_forward(&u);
            let skip = enc.pop().expect("skip");
            let cat = Tensor::concat(&u, &skip);
            let (f, fc) = self.fuse[l - 1].forward(&cat);
            up[l - 1] = Some(uc);
            fuse[l - 1] = Some(fc);
            h = f;
        }
        let (mut y, out) = self.out.forward(&h);
        let bound = T::of(OUTPUT_BOUND);
        for v in &mut y.data {
            if *v > bound {
                *v = bound;
            } else if *v < -bound {
                *v = -bound;
            }
        }
        (
            y,
            GeneratorTrace {
                inc,
                down,
                up: up.into_iter().map(|c| c.expect("filled")).collect(),
                fuse: fuse.into_iter().map(|c| c.expect("filled")).collect(),
                out,
                encoder_shapes,
            },
        )
    }

    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward(x).0
    }

    /// Back-propagates `dy` through one recorded application. Returns the
    /// gradient with respect to the input when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        trace: &GeneratorTrace<T>,
        dy: &Tensor<T>,
        accumulate: bool,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let depth = self.spec.depth;
        let mut g_enc: Vec<Option<Tensor<T>>> = vec![None; depth + 1];
        let mut g_h = self
            .out
            .backward(&trace.out, dy.clone(), accumulate, true)
            .expect("input grad requested");
        for l in 1..=depth {
            let g_cat = self.fuse[l - 1]
                .backward(&trace.fuse[l - 1], g_h, accumulate, true)
                .expect("input grad requested");
            let c_up = self.spec.channels(l - 1);
            let (g_up, g_skip) = g_cat.split(c_up);
            accumulate_into(&mut g_enc[l - 1], g_skip);
            let g_up = upsample2_backward(&g_up);
            g_h = self.up[l - 1]
                .backward(&trace.up[l - 1], g_up, accumulate, true)
                .expect("input grad requested");
        }
        accumulate_into(&mut g_enc[depth], g_h);
        for l in (1..=depth).rev() {
            let g = g_enc[l].take().expect("every level receives a gradient");
            let g_prev = self.down[l - 1]
                .backward(&trace.down[l - 1], g, accumulate, true)
                .expect("input grad requested");
            accumulate_into(&mut g_enc[l - 1], g_prev);
        }
        let g0 = g_enc[0].take().expect("level 0 gradient");
        self.inc.backward(&trace.inc, g0, accumulate, need_input_grad)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.inc.conv.params();
        for b in self.down.iter().chain(&self.up).chain(&self.fuse) {
            v.extend(b.conv.params());
        }
        v.extend(self.out.conv.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.inc.conv.params_mut();
        for b in self
            .down
            .iter_mut()
            .chain(self.up.iter_mut())
            .chain(self.fuse.iter_mut())
        {
            v.extend(b.conv.params_mut());
        }
        v.extend(self.out.conv.params_mut());
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }
}

fn accumulate_into<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
