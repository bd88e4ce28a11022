//! Layers and the two network architectures.

pub mod layers;
pub mod network;

pub use layers::{Conv, DenseGrad, Linear, LookupTable, RowGrad};
pub use network::{Architecture, ColumnTrace, Gradients, Layer, LookupSpec, Network, NetworkSpec, PositionSpec};
