use rand::Rng;

use kinesics_nn::layers::{Conv2d, ConvGeometry};
use kinesics_nn::{gemm, Layer, MatRef, NnError, Param, Parameterized, Real, Tensor};

/// Spatial graph convolution: a pointwise convolution producing `K` channel
/// groups, each mixed across joints by one partition matrix (optionally
/// reweighted by a learnable edge-importance mask) and summed.
#[derive(Debug, Clone)]
pub struct GraphConv<R: Real> {
    pub conv: Conv2d<R>,
    out_channels: usize,
    partitions: Tensor<R>,
    pub importance: Option<Param<R>>,
    projected: Option<Tensor<R>>,
    effective: Vec<R>,
}

impl<R: Real> GraphConv<R> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        partitions: Tensor<R>,
        edge_importance: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let k = partitions.dim(0);
        let conv = Conv2d::new(&format!("{name}.conv"), ConvGeometry::pointwise(in_channels, k * out_channels), rng);
        let importance = edge_importance
            .then(|| Param::trainable(format!("{name}.importance"), Tensor::full(partitions.shape(), R::one())));
        Self { conv, out_channels, partitions, importance, projected: None, effective: Vec::new() }
    }

    fn effective_adjacency(&self) -> Vec<R> {
        match &self.importance {
            Some(m) => self.partitions.data().iter().zip(m.value.data()).map(|(a, w)| *a * *w).collect(),
            None => self.partitions.data().to_vec(),
        }
    }
}

impl<R: Real> Layer<R> for GraphConv<R> {
    fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>, NnError> {
        let v = self.partitions.dim(1);
        if x.shape().len() != 4 || x.dim(3) != v {
            return Err(NnError::Shape(format!("graph conv expects (N, C, T, {v}), got {:?}", x.shape())));
        }
        let y = self.conv.forward(x, train)?;
        let (n, t) = (x.dim(0), x.dim(2));
        let k = self.partitions.dim(0);
        let c = self.out_channels;
        let rows = c * t;
        self.effective = self.effective_adjacency();
        let mut z = Tensor::zeros(&[n, c, t, v]);
        for s in 0..n {
            let zs = &mut z.data_mut()[s * rows * v..(s + 1) * rows * v];
            for p in 0..k {
                let ys = &y.data()[(s * k + p) * rows * v..][..rows * v];
                let a = &self.effective[p * v * v..(p + 1) * v * v];
                gemm(rows, v, v, MatRef::n(ys), MatRef::t(a), zs, true);
            }
        }
        self.projected = Some(y);
        Ok(z)
    }

    fn backward(&mut self, dz: &Tensor<R>) -> Tensor<R> {
        let y = self.projected.as_ref().expect("GraphConv::backward before forward");
        let (n, c, t, v) = (dz.dim(0), dz.dim(1), dz.dim(2), dz.dim(3));
        let k = self.partitions.dim(0);
        let rows = c * t;
        let mut dy = Tensor::zeros(y.shape());
        let mut da = vec![R::zero(); k * v * v];
        for s in 0..n {
            let dzs = &dz.data()[s * rows * v..(s + 1) * rows * v];
            for p in 0..k {
                let off = (s * k + p) * rows * v;
                let a = &self.effective[p * v * v..(p + 1) * v * v];
                gemm(rows, v, v, MatRef::n(dzs), MatRef::n(a), &mut dy.data_mut()[off..off + rows * v], false);
                if self.importance.is_some() {
                    let ys = &y.data()[off..off + rows * v];
                    gemm(v, rows, v, MatRef::t(dzs), MatRef::n(ys), &mut da[p * v * v..(p + 1) * v * v], true);
                }
            }
        }
        if let Some(m) = &mut self.importance {
            for ((g, d), a) in m.grad.data_mut().iter_mut().zip(&da).zip(self.partitions.data()) {
                *g += *d * *a;
            }
        }
        self.conv.backward(&dy)
    }
}

impl<R: Real> Parameterized<R> for GraphConv<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.conv.visit(f);
        if let Some(m) = &self.importance {
            f(m);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.conv.visit_mut(f);
        if let Some(m) = &mut self.importance {
            f(m);
        }
    }
}
