use crate::param::{Param, Parameterized};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Layer, NnError};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over inputs shaped `(N, C, ...)`.
///
/// Train mode normalizes with batch statistics and updates the running
/// estimates; eval mode uses the running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm<R: Real> {
    pub channels: usize,
    pub gamma: Param<R>,
    pub beta: Param<R>,
    pub running_mean: Param<R>,
    pub running_var: Param<R>,
    cache: Option<BnCache<R>>,
}

#[derive(Debug, Clone)]
struct BnCache<R> {
    shape: Vec<usize>,
    xhat: Vec<R>,
    inv_std: Vec<R>,
    train: bool,
}

impl<R: Real> BatchNorm<R> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::trainable(format!("{name}.gamma"), Tensor::full(&[channels], R::one())),
            beta: Param::trainable(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full(&[channels], R::one())),
            cache: None,
        }
    }
}

impl<R: Real> Layer<R> for BatchNorm<R> {
    fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>, NnError> {
        if x.shape().len() < 2 || x.dim(1) != self.channels {
            return Err(NnError::Shape(format!(
                "{}: expected (N, {}, ...), got {:?}",
                self.gamma.name,
                self.channels,
                x.shape()
            )));
        }
        let n = x.dim(0);
        let c = self.channels;
        let inner: usize = x.shape()[2..].iter().product();
        let count = n * inner;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if train {
            for s in 0..n {
                for ch in 0..c {
                    let seg = &x.data()[(s * c + ch) * inner..][..inner];
                    mean[ch] += seg.iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for s in 0..n {
                for ch in 0..c {
                    let seg = &x.data()[(s * c + ch) * inner..][..inner];
                    var[ch] += seg.iter().map(|v| (v.as_f64() - mean[ch]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
            for ch in 0..c {
                let rm = &mut self.running_mean.value.data_mut()[ch];
                *rm = R::of((1.0 - MOMENTUM) * rm.as_f64() + MOMENTUM * mean[ch]);
                let rv = &mut self.running_var.value.data_mut()[ch];
                *rv = R::of((1.0 - MOMENTUM) * rv.as_f64() + MOMENTUM * var[ch] * unbias);
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean.value.data()[ch].as_f64();
                var[ch] = self.running_var.value.data()[ch].as_f64();
            }
        }
        let inv_std: Vec<R> = var.iter().map(|v| R::of(1.0 / (v + EPS).sqrt())).collect();
        let mean_r: Vec<R> = mean.iter().map(|m| R::of(*m)).collect();
        let mut out = Tensor::zeros(x.shape());
        let mut xhat = vec![R::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                let g = self.gamma.value.data()[ch];
                let b = self.beta.value.data()[ch];
                for i in off..off + inner {
                    let h = (x.data()[i] - mean_r[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out.data_mut()[i] = g * h + b;
                }
            }
        }
        self.cache = Some(BnCache { shape: x.shape().to_vec(), xhat, inv_std, train });
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let cache = self.cache.as_ref().expect("BatchNorm::backward before forward");
        let n = cache.shape[0];
        let c = self.channels;
        let inner: usize = cache.shape[2..].iter().product();
        let count = R::of((n * inner) as f64);
        let mut dgamma = vec![R::zero(); c];
        let mut dbeta = vec![R::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                for i in off..off + inner {
                    dgamma[ch] += dy.data()[i] * cache.xhat[i];
                    dbeta[ch] += dy.data()[i];
                }
            }
        }
        let mut dx = Tensor::zeros(&cache.shape);
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * inner;
                let g = self.gamma.value.data()[ch];
                let k = g * cache.inv_std[ch];
                for i in off..off + inner {
                    dx.data_mut()[i] = if cache.train {
                        k * (dy.data()[i] - dbeta[ch] / count - cache.xhat[i] * dgamma[ch] / count)
                    } else {
                        k * dy.data()[i]
                    };
                }
            }
        }
        for ch in 0..c {
            self.gamma.grad.data_mut()[ch] += dgamma[ch];
            self.beta.grad.data_mut()[ch] += dbeta[ch];
        }
        dx
    }
}

impl<R: Real> Parameterized<R> for BatchNorm<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_output_is_standardized() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        let x = Tensor::from_vec(&[3, 2, 2], vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0, 5.0, 6.0, 50.0, 60.0]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.data()[(s * 2 + ch) * 2..][..2].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // running stats moved toward the batch statistics
        assert!(bn.running_mean.value.data()[0] > 0.0);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut bn = BatchNorm::<f32>::new("bn", 1);
        let x = Tensor::from_vec(&[1, 1, 2], vec![3.0, -3.0]).unwrap();
        let y = bn.forward(&x, false).unwrap();
        assert!((y.data()[0] - 3.0).abs() < 1e-3);
    }
}
