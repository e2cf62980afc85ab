//! Datasets, the reference MLP and model files.

pub mod container;
pub mod idx;
pub mod mlp;
pub mod synth;

pub use container::{load_amu_network, load_mlp, save_amu_network, save_amu_network_compact, save_mlp};
pub use idx::{load_idx_dataset, load_mnist_split, write_idx_dataset, LabeledDataset};
pub use mlp::{argmax, train_mlp, train_reference_mlp, Activation, DenseLayer, MlpModel, TrainConfig};
pub use synth::{generate_gaussian_mixture, generate_gaussian_mixture_labeled, Mixture};
