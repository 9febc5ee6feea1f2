//! Two-stream RGB-D salient object detection.
//!
//! A VGG16-style encoder runs on the RGB image and on the (three-channel)
//! depth map. Low stages enhance the depth stream with RGB detail ([`rde`]),
//! high stages enhance the RGB stream with depth semantics ([`dse`]), and a
//! densely connected decoder ([`ddr`]) turns the enhanced skip features into
//! a saliency map. [`network::Network`] wires the pieces together and
//! [`train`] fits it.
//!
//! ```no_run
//! use candle_core::{DType, Device, Tensor};
//! use cdinet::{Network, NetworkConfig, ParamStore};
//!
//! let config = NetworkConfig::toy([8, 16, 32, 64, 64]);
//! let net = Network::build(&config, ParamStore::cpu(0, DType::F32))?;
//! let rgb = Tensor::zeros((1, 3, 64, 64), DType::F32, &Device::Cpu)?;
//! let depth = rgb.clone();
//! let saliency = net.forward(&rgb, &depth)?;
//! assert_eq!(saliency.tensor().dims(), &[1, 1, 64, 64]);
//! # Ok::<(), cdinet::Error>(())
//! ```

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod ddr;
pub mod dse;
mod error;
pub mod network;
pub mod ops;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod params;
pub mod rde;
pub mod train;

pub use backbone::{BackboneConfig, Scale, Stream};
pub use checkpoint::Checkpoint;
pub use ddr::SaliencyMap;
pub use error::{Error, Result};
pub use network::{Network, NetworkConfig, Variant};
pub use params::ParamStore;
pub use train::TrainConfig;
