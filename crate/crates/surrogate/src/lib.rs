//! Learned components of the surrogate: per-condition Koopman autoencoders, the
//! convolutional reduced-order model, and Gaussian-process latent interpolation.

pub mod error;
pub mod gp;
mod init;
pub mod koopman;
pub mod norm;
pub mod rom;
pub mod synthetic;
#[cfg(feature = "testing")]
pub mod testing;

pub use error::{Result, SurrogateError};
pub use gp::{fit_gp, gp_predict, kernel, predict_bundle, GpBundle, GpBundleConfig, GpFitConfig, GpHyper, GpRegressor};
pub use koopman::{forecast, kae_loss, train_kae, KaeTrainConfig, KoopmanModel, OperatorInit};
pub use norm::FieldNormalizer;
pub use rom::{extract_latent_table, rom_decode, rom_encode, train_rom, ConvAutoencoder, LatentTable, RomConfig, RomDataset};
pub use synthetic::OrthogonalSystem;
