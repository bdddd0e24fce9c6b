use rand::Rng;

use kinesics_nn::layers::{BatchNorm, Conv2d, ConvGeometry, Dropout, Relu};
use kinesics_nn::{Layer, NnError, Param, Parameterized, Real, Tensor};

use super::gcn::GraphConv;

#[derive(Debug, Clone)]
enum Residual<R: Real> {
    None,
    Identity,
    Project { conv: Conv2d<R>, bn: BatchNorm<R> },
}

/// Spatial graph convolution followed by a temporal convolution, with a
/// residual connection around both.
#[derive(Debug, Clone)]
pub struct StGcnBlock<R: Real> {
    gcn: GraphConv<R>,
    bn_spatial: BatchNorm<R>,
    relu_spatial: Relu,
    tconv: Conv2d<R>,
    bn_temporal: BatchNorm<R>,
    dropout: Dropout,
    residual: Residual<R>,
    relu_out: Relu,
}

pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub temporal_kernel: usize,
    pub dropout: f64,
    pub edge_importance: bool,
    pub residual: bool,
}

impl<R: Real> StGcnBlock<R> {
    pub fn new(name: &str, spec: &BlockSpec, partitions: Tensor<R>, seed: u64, rng: &mut impl Rng) -> Self {
        let (cin, cout) = (spec.in_channels, spec.out_channels);
        let gcn = GraphConv::new(&format!("{name}.gcn"), cin, cout, partitions, spec.edge_importance, rng);
        let tconv = Conv2d::new(
            &format!("{name}.tcn"),
            ConvGeometry::temporal(cout, cout, spec.temporal_kernel, spec.stride),
            rng,
        );
        let residual = if !spec.residual {
            Residual::None
        } else if cin == cout && spec.stride == 1 {
            Residual::Identity
        } else {
            Residual::Project {
                conv: Conv2d::new(&format!("{name}.res.conv"), ConvGeometry::temporal(cin, cout, 1, spec.stride), rng),
                bn: BatchNorm::new(&format!("{name}.res.bn"), cout),
            }
        };
        Self {
            gcn,
            bn_spatial: BatchNorm::new(&format!("{name}.gcn.bn"), cout),
            relu_spatial: Relu::new(),
            tconv,
            bn_temporal: BatchNorm::new(&format!("{name}.tcn.bn"), cout),
            dropout: Dropout::new(spec.dropout, seed),
            residual,
            relu_out: Relu::new(),
        }
    }
}

impl<R: Real> Layer<R> for StGcnBlock<R> {
    fn forward(&mut self, x: &Tensor<R>, train: bool) -> Result<Tensor<R>, NnError> {
        let h = self.gcn.forward(x, train)?;
        let h = self.bn_spatial.forward(&h, train)?;
        let h = self.relu_spatial.forward(&h, train)?;
        let h = self.tconv.forward(&h, train)?;
        let h = self.bn_temporal.forward(&h, train)?;
        let mut h = self.dropout.forward(&h, train)?;
        match &mut self.residual {
            Residual::None => {}
            Residual::Identity => add_into(&mut h, x)?,
            Residual::Project { conv, bn } => {
                let r = conv.forward(x, train)?;
                add_into(&mut h, &bn.forward(&r, train)?)?;
            }
        }
        self.relu_out.forward(&h, train)
    }

    fn backward(&mut self, dy: &Tensor<R>) -> Tensor<R> {
        let d = self.relu_out.backward(dy);
        let dh = self.dropout.backward(&d);
        let dh = self.bn_temporal.backward(&dh);
        let dh = self.tconv.backward(&dh);
        let dh = self.relu_spatial.backward(&dh);
        let dh = self.bn_spatial.backward(&dh);
        let mut dx = self.gcn.backward(&dh);
        match &mut self.residual {
            Residual::None => {}
            Residual::Identity => add_into(&mut dx, &d).expect("residual gradient shape"),
            Residual::Project { conv, bn } => {
                let dr = conv.backward(&bn.backward(&d));
                add_into(&mut dx, &dr).expect("residual gradient shape");
            }
        }
        dx
    }
}

fn add_into<R: Real>(acc: &mut Tensor<R>, other: &Tensor<R>) -> Result<(), NnError> {
    if acc.shape() != other.shape() {
        return Err(NnError::Shape(format!("residual shape {:?} vs {:?}", other.shape(), acc.shape())));
    }
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += *b;
    }
    Ok(())
}

impl<R: Real> Parameterized<R> for StGcnBlock<R> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>)) {
        self.gcn.visit(f);
        self.bn_spatial.visit(f);
        self.tconv.visit(f);
        self.bn_temporal.visit(f);
        if let Residual::Project { conv, bn } = &self.residual {
            conv.visit(f);
            bn.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>)) {
        self.gcn.visit_mut(f);
        self.bn_spatial.visit_mut(f);
        self.tconv.visit_mut(f);
        self.bn_temporal.visit_mut(f);
        if let Residual::Project { conv, bn } = &mut self.residual {
            conv.visit_mut(f);
            bn.visit_mut(f);
        }
    }
}
