//! T1 ↔ T2 MR contrast translation.
//!
//! Five model variants (cycle-consistent GAN with and without a supervised
//! term, shared-latent VAE-GAN, supervised generators alone, and a two-layer
//! baseline) on a small reverse-mode autodiff core, plus the data pipeline
//! and the quantitative evaluation (MAE, PSNR, mutual information,
//! relative error maps).
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod autograd;
pub mod data;
pub mod error;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type ImageSlice32 = data::ImageSlice<f32>;
pub type ImageSlice64 = data::ImageSlice<f64>;
pub type NormalizedImage32 = data::NormalizedImage<f32>;
pub type NormalizedImage64 = data::NormalizedImage<f64>;
pub type PairedDataset32 = data::PairedDataset<f32>;
pub type PairedDataset64 = data::PairedDataset<f64>;
pub type ModelBundle32 = models::ModelBundle<f32>;
pub type ModelBundle64 = models::ModelBundle<f64>;
