//! Measurements that compare a model with the theory: residual-stream
//! activations, PCA, affine regression onto belief geometries, attention
//! decay fits, OV / embedding geometry, and weights built from the theory.

mod activations;
mod attention;
mod geometry;
mod regression;
mod synthetic;

pub use activations::{collect_activations, pca, pca_rows, ActivationSet, PcaResult, Stage};
pub use attention::{attention_decay_fit, mean_attention, parity_masses, DecayFit, MeanPattern, ParityMass};
pub use geometry::{embedding_geometry_check, ov_geometry_check, EmbeddingReport, OvHeadReport, OvReport};
pub use regression::{fit_affine, regress_to_geometry, AffineFit, RegressionFit, Weighting};
pub use synthetic::theory_model;

use alloc::vec::Vec;

pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
