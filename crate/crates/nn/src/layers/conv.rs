use rand::Rng;

use crate::param::{Param, Parameterized};
use crate::real::{gemm, MatRef, Real};
use crate::tensor::Tensor;
use crate::{Layer, NnError};

/// Geometry of a 2D convolution over `(N, C, H, W)` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeometry {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, out_channels, kernel: (1, 1), stride: (1, 1), padding: (0, 0) }
    }

    /// `k x 1` kernel along the first spatial axis with "same" padding.
    pub fn temporal(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, 1),
            stride: (stride, 1),
            padding: ((kernel - 1) / 2, 0),
        }
    }

    pub fn square(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: ((kernel - 1) / 2, (kernel - 1) / 2),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1;
        let ow = (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1;
        (oh, ow)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    fn is_identity_patch(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.padding == (0, 0)
    }
}

/// 2D convolution implemented as im2col followed by one GEMM per sample.
#[derive(Debug, Clone)]
pub struct Conv2d<R: Real> {
    pub geometry: ConvGeometry,
    pub weight: Param<R>,
    pub bias: Param<R>,
    /// Skip computing the input gradient (first layer of a network).
    pub needs_input_grad: bool,
    input: Option<Tensor<R>>,
}

impl<R: Real> Conv2d<R> {
    pub fn new(name: &str, geometry: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = geometry.patch_len();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<R> = (0..geometry.out_channels * fan_in)
            .map(|_| R::of(rng.gen_range(-bound..bound)))
            .collect();
        let b: Vec<R> = (0..geometry.out_channels)
            .map(|_| R::of(rng.gen_range(-bound..bound)))
            .collect();
        Self {
            geometry,
            weight: Param::trainable(
                format!("{name}.weight"),
                Tensor::from_vec(&[geometry.out_channels, fan_in], w).expect("weight shape"),
            ),
            bias: Param::trainable(
                format!("{name}.bias"),
                Tensor::from_vec(&[geometry.out_channels], b).expect("bias shape"),
            ),
            needs_input_grad: true,
            input: None,
        }
    }

    fn im2col(&self, x: &[R], h: usize, w: usize, col: &mut [R]) {
        let g = &self.geometry;
        let (oh, ow) = g.output_hw(h, w);
        let (kh, kw) = g.kernel;
        let (sh, sw) = g.stride;
        let (ph, pw) = g.padding;
        let p = oh * ow;
        for ci in 0..g.in_channels {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &mut col[((ci * kh + i) * kw + j) * p..][..p];
                    for y in 0..oh {
                        let src_y = (y * sh + i) as isize - ph as isize;
                        let dst = &mut row[y * ow..(y + 1) * ow];
                        if src_y < 0 || src_y >= h as isize {
                            dst.iter_mut().for_each(|v| *v = R::zero());
                            continue;
                        }
                        let src_row = &plane[src_y as usize * w..(src_y as usize + 1) * w];
                        if sw == 1 && pw == 0 && j == 0 && ow == w {
                            dst.copy_from_slice(src_row);
                            continue;
                        }
                        for (xo, d) in dst.iter_mut().enumerate() {
                            let src_x = (xo * sw + j) as isize - pw as isize;
                            *d = if src_x < 0 || src_x >= w as isize {
                                R::zero()
                            } else {
                                src_row[src_x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[R], h: usize, w: usize, dx: &mut [R]) {
        let g = &self.geometry;
        let (oh, ow) = g.output_hw(h, w);
        let (kh, kw) = g.kernel;
        let (sh, sw) = g.stride;
        let (ph, pw) = g.padding;
        let p = oh * ow;
        for ci in 0..g.in_channels {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = &col[((ci * kh + i) * kw + j) * p..][..p];
                    for y in 0..oh {
                        let src_y = (y * sh + i) as isize - ph as isize;
                        if src_y < 0 || src_y >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[src_y as usize * w..(src_y as usize + 1) * w];
                        for xo in 0..ow {
                            let src_x = (xo * sw + j) as isize - pw as isize;
                            if src_x >= 0 && src_x < w as isize {
                                dst_row[src_x as usize] += row[y * ow + xo];
                            }
                        }
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &Tensor<R>) -> Result<(usize, usize, usize), NnError> {
        if x.shape().len() != 4 || x.dim(1) != self.geometry.in_channels {
            return Err(NnError::Shape(format!(
                "{}: expected (N, {}, H, W), got {:?}",
                self.weight.name,
                self.geometry.in_channels,
                x.shape()
            )));
        }
        let (h, w) = (x.dim(2), x.dim(3));
        if h + 2 * self.geometry.padding.0 < self.geometry.kernel.0
            || w + 2 * self.geometry.padding.1 < self.geometry.kernel.1
        {
            return Err(NnError::Shape(format!(
                "{}: input {}x{} smaller than kernel",
                self.weight.name, h, w
            )));
        }
        Ok((x.dim(0), h, w))
    }
}

impl<R: Real> Layer<R> for Conv2d<R> {
    fn forward(&mut self, x: &Tensor<R>, _train: bool) -> Result<Tensor<R>, NnError> {
        let (n, h, w) = self.check_input(x)?;
        let g = self.geometry;
        let (oh, ow) = g.output_hw(h, w);
        let p = oh * ow;
        let patch = g.patch_len();
        let mut out = Tensor::zeros(&[n, g.out_channels, oh, ow]);
        let mut col = if g.is_identity_patch() { Vec::new() } else { vec![R::zero(); patch * p] };
        let in_stride = g.in_channels * h * w;
        for s in 0..n {
            let xs = &x.data()[s * in_stride..(s + 1) * in_stride];
            let cols: &[R] = if g.is_identity_patch() {
                xs
            } else {
                self.im2col(xs, h, w, &mut col);
                &col
            };
            let ys = &mut out.data_mut()[s * g.out_channels * p..(s + 1) * g.out_channels * p];
            for (o, chunk) in ys.chunks_mut(p).enumerate() {
                chunk.fill(self.bias.value.data()[o]);
            }
            gemm(g.out_channels, patch, p, MatRef::n(self.weight.value.data()), MatRef::n(cols), ys, true);
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let x = self.input.as_ref().expect("Conv2d::backward before forward");
        let g = self.geometry;
        let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        let (oh, ow) = g.output_hw(h, w);
        let p = oh * ow;
        let patch = g.patch_len();
        let in_stride = g.in_channels * h * w;
        let mut dx = if self.needs_input_grad {
            Tensor::zeros(x.shape())
        } else {
            Tensor::zeros(&[0])
        };
        let identity = g.is_identity_patch();
        let mut col = if identity { Vec::new() } else { vec![R::zero(); patch * p] };
        let mut dcol = if identity { Vec::new() } else { vec![R::zero(); patch * p] };
        for s in 0..n {
            let xs = &x.data()[s * in_stride..(s + 1) * in_stride];
            let dys = &dy.data()[s * g.out_channels * p..(s + 1) * g.out_channels * p];
            for (o, chunk) in dys.chunks(p).enumerate() {
                self.bias.grad.data_mut()[o] += chunk.iter().copied().sum::<R>();
            }
            let cols: &[R] = if identity {
                xs
            } else {
                self.im2col(xs, h, w, &mut col);
                &col
            };
            gemm(g.out_channels, p, patch, MatRef::n(dys), MatRef::t(cols), self.weight.grad.data_mut(), true);
            if self.needs_input_grad {
                let dxs = &mut dx.data_mut()[s * in_stride..(s + 1) * in_stride];
                if identity {
                    gemm(patch, g.out_channels, p, MatRef::t(self.weight.value.data()), MatRef::n(dys), dxs, false);
                } else {
                    gemm(patch, g.out_channels, p, MatRef::t(self.weight.value.data()), MatRef::n(dys), &mut dcol, false);
                    self.col2im(&dcol, h, w, dxs);
                }
            }
        }
        dx
    }
}

impl<R: Real> Parameterized<R> for Conv2d<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col.
    fn direct(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Vec<f64> {
        let g = conv.geometry;
        let (n, h, w) = (x.dim(0), x.dim(2), x.dim(3));
        let (oh, ow) = g.output_hw(h, w);
        let mut out = vec![0.0; n * g.out_channels * oh * ow];
        let wt = conv.weight.value.data();
        for s in 0..n {
            for o in 0..g.out_channels {
                for y in 0..oh {
                    for xo in 0..ow {
                        let mut acc = conv.bias.value.data()[o];
                        for ci in 0..g.in_channels {
                            for i in 0..g.kernel.0 {
                                for j in 0..g.kernel.1 {
                                    let sy = (y * g.stride.0 + i) as isize - g.padding.0 as isize;
                                    let sx = (xo * g.stride.1 + j) as isize - g.padding.1 as isize;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((s * g.in_channels + ci) * h + sy as usize) * w + sx as usize];
                                    let wv = wt[(o * g.in_channels + ci) * g.kernel.0 * g.kernel.1 + i * g.kernel.1 + j];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((s * g.out_channels + o) * oh + y) * ow + xo] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for geometry in [
            ConvGeometry::pointwise(3, 4),
            ConvGeometry::temporal(3, 4, 5, 2),
            ConvGeometry::square(3, 2, 3),
            ConvGeometry { in_channels: 2, out_channels: 3, kernel: (1, 1), stride: (2, 1), padding: (0, 0) },
        ] {
            let mut conv = Conv2d::<f64>::new("c", geometry, &mut rng);
            let x = Tensor::from_vec(&[2, geometry.in_channels, 7, 5], (0..2 * geometry.in_channels * 35).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect()).unwrap();
            let y = conv.forward(&x, true).unwrap();
            let want = direct(&conv, &x);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{geometry:?}");
            }
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new("c", ConvGeometry::pointwise(3, 4), &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 2, 4, 4]), false).is_err());
    }
}
