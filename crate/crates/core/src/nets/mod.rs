//! Generator and discriminator families and the four-network bundle.

pub mod layers;
mod patch;
mod unet;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use patch::{Discriminator, DiscriminatorSpec, DiscriminatorTrace};
pub use unet::{Generator, GeneratorSpec, GeneratorTrace, NormKind, OutputActivation, OUTPUT_BOUND};

use crate::archive::{self, Arrays};
use crate::error::{Error, Result};
use crate::phantom::Image;
use crate::tensor::{denormalize, normalize, Real, Tensor};

pub fn build_generator<T: Real>(spec: &GeneratorSpec, seed: u64) -> Result<Generator<T>> {
    Generator::build(spec, seed)
}

pub fn build_discriminator<T: Real>(spec: &DiscriminatorSpec, seed: u64) -> Result<Discriminator<T>> {
    Discriminator::build(spec, seed)
}

/// Applies a generator to an image in the network range `[-1, 1]`.
pub fn translate(generator: &Generator<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    generator.check_input(image)?;
    if image.data.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Shape("translate expects inputs in [-1, 1]".into()));
    }
    Ok(generator.apply(image))
}

pub fn image_to_tensor(img: &Image) -> Tensor<f32> {
    Tensor {
        channels: 1,
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| normalize(v)).collect(),
    }
}

pub fn tensor_to_image(t: &Tensor<f32>) -> Image {
    Image {
        height: t.height,
        width: t.width,
        data: t.data.iter().map(|&v| denormalize(v)).collect(),
    }
}

/// Seeds the four networks were initialised from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSeeds {
    pub f: u64,
    pub g: u64,
    pub d_x: u64,
    pub d_y: u64,
}

impl ModelSeeds {
    pub fn derive(seed: u64) -> Self {
        use crate::seed::derive_seed;
        Self {
            f: derive_seed(seed, "init/F"),
            g: derive_seed(seed, "init/G"),
            d_x: derive_seed(seed, "init/D_X"),
            d_y: derive_seed(seed, "init/D_Y"),
        }
    }
}

/// Identifies the training run a bundle came from; evaluation uses it to
/// refuse slices the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Fingerprint {
    pub seed: u64,
    pub config_hash: String,
    pub held_out_fold: Option<usize>,
    pub held_out_patients: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleMeta {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    decision_grid: (usize, usize),
    fingerprint: Fingerprint,
}

/// `F: X -> Y`, `G: Y -> X` and their discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub f: Generator<f32>,
    pub g: Generator<f32>,
    pub d_x: Discriminator<f32>,
    pub d_y: Discriminator<f32>,
    pub fingerprint: Fingerprint,
}

impl ModelBundle {
    pub fn build(
        generator: &GeneratorSpec,
        discriminator: &DiscriminatorSpec,
        seeds: ModelSeeds,
        fingerprint: Fingerprint,
    ) -> Result<Self> {
        if generator.image_size != discriminator.image_size {
            return Err(Error::Config(format!(
                "generator image size {} != discriminator image size {}",
                generator.image_size, discriminator.image_size
            )));
        }
        Ok(Self {
            f: Generator::build(generator, seeds.f)?,
            g: Generator::build(generator, seeds.g)?,
            d_x: Discriminator::build(discriminator, seeds.d_x)?,
            d_y: Discriminator::build(discriminator, seeds.d_y)?,
            fingerprint,
        })
    }

    pub fn decision_grid(&self) -> (usize, usize) {
        self.d_x.decision_shape()
    }

    /// Pseudo-healthy translation of an image with intensities in `[0, 1]`.
    pub fn to_healthy(&self, img: &Image) -> Result<Image> {
        let out = translate(&self.f, &image_to_tensor(img))?;
        Ok(tensor_to_image(&out))
    }

    fn networks(&self) -> [(&'static str, Vec<&layers::Param<f32>>); 4] {
        [
            ("F", self.f.params()),
            ("G", self.g.params()),
            ("D_X", self.d_x.params()),
            ("D_Y", self.d_y.params()),
        ]
    }

    pub fn to_arrays(&self) -> Arrays {
        let mut arrays = Arrays::default();
        for (net, params) in self.networks() {
            for p in params {
                arrays.push(format!("{net}.{}", p.name), p.shape.clone(), &p.value);
            }
        }
        arrays
    }

    pub(crate) fn load_arrays(&mut self, arrays: &Arrays) -> Result<()> {
        let nets: [(&str, Vec<&mut layers::Param<f32>>); 4] = [
            ("F", self.f.params_mut()),
            ("G", self.g.params_mut()),
            ("D_X", self.d_x.params_mut()),
            ("D_Y", self.d_y.params_mut()),
        ];
        for (net, params) in nets {
            for p in params {
                let v = arrays.require(&format!("{net}.{}", p.name), &p.shape)?;
                p.value.copy_from_slice(v);
            }
        }
        Ok(())
    }

    /// Checkpoint layout: an [`archive`] whose header carries both specs, the
    /// decision-grid shape and the fingerprint, and whose arrays are the
    /// parameters named `<net>.<layer>.<weight|bias>` with net in
    /// `F, G, D_X, D_Y`, weights shaped `[out, in, k, k]`, row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        archive::write(path, &self.meta(), &self.to_arrays())
    }

    fn meta(&self) -> BundleMeta {
        BundleMeta {
            generator: self.f.spec.clone(),
            discriminator: self.d_x.spec.clone(),
            decision_grid: self.decision_grid(),
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        archive::encode(&self.meta(), &self.to_arrays())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, arrays) = archive::decode::<BundleMeta>(bytes, Path::new("<memory>"))?;
        Self::from_parts(meta, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, arrays) = archive::read::<BundleMeta>(path)?;
        Self::from_parts(meta, &arrays)
    }

    fn from_parts(meta: BundleMeta, arrays: &Arrays) -> Result<Self> {
        // Build with throwaway seeds, then overwrite every parameter.
        let mut bundle = Self::build(
            &meta.generator,
            &meta.discriminator,
            ModelSeeds {
                f: 0,
                g: 0,
                d_x: 0,
                d_y: 0,
            },
            meta.fingerprint,
        )?;
        if bundle.decision_grid() != meta.decision_grid {
            return Err(Error::Shape(format!(
                "checkpoint decision grid {:?} disagrees with its spec ({:?})",
                meta.decision_grid,
                bundle.decision_grid()
            )));
        }
        bundle.load_arrays(arrays)?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle() -> ModelBundle {
        ModelBundle::build(
            &GeneratorSpec::new(32, 2, 4),
            &DiscriminatorSpec::new(32, 2, 4),
            ModelSeeds::derive(3),
            Fingerprint {
                seed: 3,
                config_hash: "abc".into(),
                held_out_fold: Some(1),
                held_out_patients: ["S01".to_string()].into_iter().collect(),
            },
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let b = tiny_bundle();
        let probe = Tensor::from_vec(1, 32, 32, (0..1024).map(|i| ((i as f32) * 0.37).sin()).collect()).unwrap();
        let before = b.f.apply(&probe);
        let bytes = b.to_bytes().unwrap();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        let after = back.f.apply(&probe);
        assert_eq!(
            before.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            after.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn translate_contract() {
        let b = tiny_bundle();
        let x = Tensor::from_vec(1, 32, 32, (0..1024).map(|i| ((i % 7) as f32) / 3.5 - 1.0).collect()).unwrap();
        let y1 = translate(&b.f, &x).unwrap();
        let y2 = translate(&b.f, &x).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(y1.shape(), x.shape());
        assert!(y1.data.iter().all(|v| *v > -1.0 && *v < 1.0));
        assert!(translate(&b.f, &Tensor::zeros(1, 16, 16)).is_err());
        assert!(translate(&b.f, &Tensor::filled(1, 32, 32, 2.0)).is_err());
    }

    #[test]
    fn pseudo_healthy_output_is_in_unit_interval() {
        let b = tiny_bundle();
        let img = Image::new(32, 32, 0.7);
        let out = b.to_healthy(&img).unwrap();
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mismatched_image_sizes_are_rejected() {
        assert!(ModelBundle::build(
            &GeneratorSpec::new(32, 2, 4),
            &DiscriminatorSpec::new(64, 2, 4),
            ModelSeeds::derive(0),
            Fingerprint::default()
        )
        .is_err());
    }
}
