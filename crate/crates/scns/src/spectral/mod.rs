//! Trigonometric fields on the torus and the norm/inequality machinery
//! built on top of them.

mod field;
mod grid;
mod moser;

pub use field::SpectralField;
pub use grid::{multi_indices_of_order, multi_indices_up_to, MultiIndex, TorusGrid, MAX_DIM};
pub use moser::{
    embedding_constant, fit_and_validate, moser_check, moser_composition_check, random_field,
    random_positive_field, EnsembleFit, IdentityMap, MoserKind, MoserReport, PowerMap, SinMap,
    SmoothMap,
};
