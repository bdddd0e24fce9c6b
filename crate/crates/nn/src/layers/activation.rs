use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::param::{Param, Parameterized};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Layer, NnError};

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<R: Real> Layer<R> for Relu {
    fn forward(&mut self, x: &Tensor<R>, _train: bool) -> Result<Tensor<R>, NnError> {
        let mut out = x.clone();
        self.mask.clear();
        self.mask.reserve(x.len());
        for v in out.data_mut() {
            let keep = *v > R::zero() || v.is_nan();
            self.mask.push(keep);
            if !keep {
                *v = R::zero();
            }
        }
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        assert_eq!(dy.len(), self.mask.len(), "Relu::backward shape mismatch");
        let mut dx = dy.clone();
        for (v, keep) in dx.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *v = R::zero();
            }
        }
        dx
    }
}

impl<R: Real> Parameterized<R> for Relu {
    fn visit(&self, _f: &mut dyn FnMut(&Param<R>)) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param<R>)) {}
}

/// Inverted dropout with its own seeded generator. Identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    scale: Vec<f64>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self { rate, rng: ChaCha8Rng::seed_from_u64(seed), scale: Vec::new() }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl<R: Real> Layer<R> for Dropout {
    fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>, NnError> {
        self.scale.clear();
        if !train || self.rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let mut out = x.clone();
        for v in out.data_mut() {
            let s = if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
            self.scale.push(s);
            *v *= R::of(s);
        }
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        if self.scale.is_empty() {
            return dy.clone();
        }
        let mut dx = dy.clone();
        for (v, s) in dx.data_mut().iter_mut().zip(&self.scale) {
            *v *= R::of(*s);
        }
        dx
    }
}

impl<R: Real> Parameterized<R> for Dropout {
    fn visit(&self, _f: &mut dyn FnMut(&Param<R>)) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param<R>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_zeroes_negatives_and_their_gradient() {
        let mut relu = Relu::new();
        let x = Tensor::from_vec(&[4], vec![-1.0f32, 0.0, 0.5, 2.0]).unwrap();
        let y = relu.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let dx = relu.backward(&Tensor::full(&[4], 1.0f32));
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_propagates_nan() {
        let mut relu = Relu::new();
        let y = relu.forward(&Tensor::from_vec(&[2], vec![f32::NAN, -1.0]).unwrap(), false).unwrap();
        assert!(y.data()[0].is_nan());
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut d = Dropout::new(0.5, 1);
        let x = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(d.forward(&x, false).unwrap(), x);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut d = Dropout::new(0.5, 7);
        let x = Tensor::full(&[20_000], 1.0f64);
        let y = d.forward(&x, true).unwrap();
        let mean = y.data().iter().sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.05);
    }
}
