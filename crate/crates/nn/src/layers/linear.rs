use rand::Rng;

use crate::param::{Param, Parameterized};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;
use crate::{Layer, NnError};

/// Fully connected layer `(N, in) -> (N, out)`.
#[derive(Debug, Clone)]
pub struct Linear<R: Real> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<R>,
    pub bias: Param<R>,
    input: Option<Tensor<R>>,
}

impl<R: Real> Linear<R> {
    pub fn new(name: &str, in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = (0..in_features * out_features).map(|_| R::of(rng.gen_range(-bound..bound))).collect();
        let b = (0..out_features).map(|_| R::of(rng.gen_range(-bound..bound))).collect();
        Self {
            in_features,
            out_features,
            weight: Param::trainable(format!("{name}.weight"), Tensor::from_vec(&[out_features, in_features], w).expect("shape")),
            bias: Param::trainable(format!("{name}.bias"), Tensor::from_vec(&[out_features], b).expect("shape")),
            input: None,
        }
    }
}

impl<R: Real> Layer<R> for Linear<R> {
    fn forward(&mut self, x: &Tensor<R>, _train: bool) -> Result<Tensor<R>, NnError> {
        if x.shape().len() != 2 || x.dim(1) != self.in_features {
            return Err(NnError::Shape(format!(
                "{}: expected (N, {}), got {:?}",
                self.weight.name,
                self.in_features,
                x.shape()
            )));
        }
        let n = x.dim(0);
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, self.in_features, self.out_features, MatRef::n(x.data()), MatRef::t(self.weight.value.data()), out.data_mut(), true);
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let x = self.input.as_ref().expect("Linear::backward before forward");
        let n = x.dim(0);
        for row in dy.data().chunks(self.out_features) {
            for (g, d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += *d;
            }
        }
        gemm(self.out_features, n, self.in_features, MatRef::t(dy.data()), MatRef::n(x.data()), self.weight.grad.data_mut(), true);
        let mut dx = Tensor::zeros(&[n, self.in_features]);
        gemm(n, self.out_features, self.in_features, MatRef::n(dy.data()), MatRef::n(self.weight.value.data()), dx.data_mut(), false);
        dx
    }
}

impl<R: Real> Parameterized<R> for Linear<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
