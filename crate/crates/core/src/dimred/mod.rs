//! Kernel PCA and independent component analysis.

mod ica;
mod kpca;

pub use ica::{
    amari_index, ica_fit, ica_fit_epochs, ica_reduce_epochs, ica_transform, stack_time_steps, whiten, whiten_to,
    IcaModel, IcaParams, Whitening, DEFAULT_ICA_COMPONENTS, WHITEN_EIGEN_FLOOR,
};
pub use kpca::{double_center, kpca_fit, kpca_transform, Kernel, KpcaModel};
