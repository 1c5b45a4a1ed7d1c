//! Ingestion, preprocessing, synthetic data, model files and reports.

pub mod artifact;
pub mod preprocess;
pub mod report;
pub mod synthetic;
pub mod table;

pub use artifact::{load_model, persist_model, ModelArtifact, TrainingMetadata, FORMAT_VERSION, MAGIC};
pub use preprocess::{anscombe_transform, standardize_columns, Preprocessing, Standardization};
pub use report::{emit_report, file_checksum, metrics_summary, write_manifest, CURVE_POINTS};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};
pub use table::{
    load_codata, load_labels, load_matrix, load_primary, CoDataSchema, LabeledMatrix, SchemaColumn,
    SchemaKind, SchemaMonotonicity,
};
