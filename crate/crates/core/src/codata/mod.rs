//! Co-data model: split frequencies regressed on per-variable side information.

mod basis;
mod design;
mod model;
mod reparam;

pub use basis::{build_bspline_basis, SplineBasis};
pub use design::{CoDataColumn, CoDataDesign, ColumnKind, ColumnValues, Monotonicity};
pub use model::{
    fit_codata_model, predict_pj, CoDataFit, ColumnSchema, CurvePoint, FittedTerm,
    ModelSettings, PenalizedLikelihood, SmoothFit,
};
pub use reparam::{sigma_reparam, Direction, EXP_CLAMP};
