//! From-scratch U-Net (2D and 3D) with backpropagation, Adam and
//! Noise2Noise training.
//!
//! Tensors are processed one sample at a time as `[channels, d, h, w]`
//! buffers; images use `d == 1` with `1 x k x k` kernels. Convolutions go
//! through im2col and a GEMM from `matrixmultiply`.

mod adam;
mod layers;
mod predict;
mod real;
mod tensor;
mod train;
mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use predict::{predict, predict_whole, restore_pair};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{train, train_observed, Model, PairDataset, TrainConfig, TrainHistory};
pub use unet::{activation_pattern, backward, mse_loss, unet_forward, UNetConfig, UNetParams};
