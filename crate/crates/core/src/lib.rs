//! Small attention residual UNet (SAR-UNet) nowcasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autograd`]: a rank-4 tensor, the numeric kernels and a
//!   reverse-mode tape over them.
//! * [`nn`]: depthwise separable convolution, the residual DSC block and CBAM.
//! * [`model`]: the full encoder/decoder in its `sar` and `smaat` variants,
//!   the persistence baseline and checkpoints.
//! * [`data`]: frame series, the `NWDS` container, window assembly,
//!   normalisation and a synthetic advecting-blob generator.
//! * [`train`]: MSE loss, Adam, the plateau scheduler with early stopping and
//!   the `fit` loop.
//! * [`metrics`]: binarisation, confusion counts and report tables.
//! * [`gradcam`]: Grad-CAM heatmaps for image-to-image predictions.
//! * [`cli`]: the `nowcast` command-line surface.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcam;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Shape4, Tensor4};
