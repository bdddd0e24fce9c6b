use crate::param::{Param, Parameterized};
use crate::real::Real;
use crate::tensor::Tensor;
use crate::{Layer, NnError};

/// 2x2 max pooling with stride 2 over `(N, C, H, W)`. An axis of length 1
/// passes through unpooled; an odd trailing row/column is dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2d {
    in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_hw(h: usize, w: usize) -> (usize, usize) {
        ((h / 2).max(1), (w / 2).max(1))
    }
}

impl<R: Real> Layer<R> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<R>, _train: bool) -> Result<Tensor<R>, NnError> {
        if x.shape().len() != 4 {
            return Err(NnError::Shape(format!("MaxPool2d expects rank 4, got {:?}", x.shape())));
        }
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (oh, ow) = Self::output_hw(h, w);
        let (wh, ww) = (if h == 1 { 1 } else { 2 }, if w == 1 { 1 } else { 2 });
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        self.argmax = vec![0; n * c * oh * ow];
        for plane in 0..n * c {
            let base = plane * h * w;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + (y * wh) * w + xo * ww;
                    for i in 0..wh {
                        for j in 0..ww {
                            let idx = base + (y * wh + i) * w + xo * ww + j;
                            if x.data()[idx] > x.data()[best] || x.data()[idx].is_nan() {
                                best = idx;
                            }
                        }
                    }
                    let o = (plane * oh + y) * ow + xo;
                    out.data_mut()[o] = x.data()[best];
                    self.argmax[o] = best;
                }
            }
        }
        self.in_shape = x.shape().to_vec();
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let mut dx = Tensor::zeros(&self.in_shape);
        for (o, &src) in self.argmax.iter().enumerate() {
            dx.data_mut()[src] += dy.data()[o];
        }
        dx
    }
}

impl<R: Real> Parameterized<R> for MaxPool2d {
    fn visit(&self, _f: &mut dyn FnMut(&Param<R>)) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param<R>)) {}
}

/// Mean over every axis after the channel axis: `(N, C, ...) -> (N, C)`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<R: Real> Layer<R> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<R>, _train: bool) -> Result<Tensor<R>, NnError> {
        if x.shape().len() < 2 {
            return Err(NnError::Shape(format!("GlobalAvgPool expects rank >= 2, got {:?}", x.shape())));
        }
        let (n, c) = (x.dim(0), x.dim(1));
        let inner: usize = x.shape()[2..].iter().product();
        let scale = R::of(1.0 / inner as f64);
        let data: Vec<R> = x.data().chunks(inner).map(|seg| seg.iter().copied().sum::<R>() * scale).collect();
        self.in_shape = x.shape().to_vec();
        Tensor::from_vec(&[n, c], data)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let inner: usize = self.in_shape[2..].iter().product();
        let scale = R::of(1.0 / inner as f64);
        let mut dx = Vec::with_capacity(dy.len() * inner);
        for g in dy.data() {
            dx.extend(std::iter::repeat(*g * scale).take(inner));
        }
        Tensor::from_vec(&self.in_shape, dx).expect("pool backward shape")
    }
}

impl<R: Real> Parameterized<R> for GlobalAvgPool {
    fn visit(&self, _f: &mut dyn FnMut(&Param<R>)) {}
    fn visit_mut(&mut self, _f: &mut dyn FnMut(&mut Param<R>)) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_routes_gradient_to_max() {
        let mut p = MaxPool2d::new();
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0f32, 5.0, 2.0, 3.0, 4.0, 9.0]).unwrap();
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
        let dx = p.backward(&Tensor::full(&[1, 1, 1, 1], 1.0f32));
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_keeps_unit_axis() {
        let mut p = MaxPool2d::new();
        let x = Tensor::from_vec(&[1, 1, 1, 4], vec![1.0f32, 3.0, 2.0, 0.0]).unwrap();
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn global_pool_averages() {
        let mut p = GlobalAvgPool::new();
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0f32, 3.0, 10.0, 20.0]).unwrap();
        let y = p.forward(&x, true).unwrap();
        assert_eq!(y.data(), &[2.0, 15.0]);
    }
}
