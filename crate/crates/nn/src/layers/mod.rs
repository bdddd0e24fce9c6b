mod activation;
mod conv;
mod linear;
mod norm;
mod pool;

pub use activation::{Dropout, Relu};
pub use conv::{Conv2d, ConvGeometry};
pub use linear::Linear;
pub use norm::BatchNorm;
pub use pool::{GlobalAvgPool, MaxPool2d};
