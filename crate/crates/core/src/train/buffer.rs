use rand::Rng;

use crate::tensor::Tensor;

/// History of generated images shown to a discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub capacity: usize,
    pub images: Vec<Tensor<f32>>,
}

impl ImageBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            images: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Below capacity each fresh image is stored and returned as is. At
    /// capacity it replaces a uniformly chosen stored image with probability
    /// 1/2 (the displaced image is returned), otherwise it is returned
    /// directly. The second value counts swaps.
    pub fn query<R: Rng>(&mut self, fresh: &[Tensor<f32>], rng: &mut R) -> (Vec<Tensor<f32>>, usize) {
        if self.capacity == 0 {
            return (fresh.to_vec(), 0);
        }
        let mut out = Vec::with_capacity(fresh.len());
        let mut swaps = 0;
        for img in fresh {
            if self.images.len() < self.capacity {
                self.images.push(img.clone());
                out.push(img.clone());
            } else if rng.gen::<f64>() < 0.5 {
                let i = rng.gen_range(0..self.capacity);
                out.push(std::mem::replace(&mut self.images[i], img.clone()));
                swaps += 1;
            } else {
                out.push(img.clone());
            }
        }
        (out, swaps)
    }
}
