//! Training data preparation and fitting of the learnable priors.

pub mod latent;
pub mod linear;
pub mod preprocess;

pub use latent::{reconstruction_error, train_latent_field, LatentTrainConfig, LatentTraining};
pub use linear::{fit_gmm, fit_gmm_data, fit_pca, fit_pca_data, window_matrix, GmmFit};
pub use preprocess::{preprocess, Handedness, ProcessedClip, RawSequence, CLIP_LEN};
