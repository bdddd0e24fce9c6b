use crate::real::Real;
use crate::tensor::Tensor;

/// Whether an optimizer may update the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics and other state saved with the model but never
    /// touched by an optimizer.
    Buffer,
}

#[derive(Debug, Clone)]
pub struct Param<R> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<R>,
    pub grad: Tensor<R>,
}

impl<R: Real> Param<R> {
    pub fn trainable(name: impl Into<String>, value: Tensor<R>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name: name.into(), kind: ParamKind::Trainable, value, grad }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<R>) -> Self {
        Self { name: name.into(), kind: ParamKind::Buffer, value, grad: Tensor::zeros(&[0]) }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(R::zero());
    }
}

/// Anything that owns named parameters. Visit order is stable and defines
/// checkpoint layout and optimizer state indexing.
pub trait Parameterized<R: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<R>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<R>));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| {
            if p.is_trainable() {
                p.zero_grad()
            }
        });
    }

    fn num_trainable(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.is_trainable() {
                n += p.value.len()
            }
        });
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name.clone()));
        names
    }
}
