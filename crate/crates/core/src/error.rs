use std::path::PathBuf;

/// Errors produced by the gridpop library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("world file: {0}")]
    WorldFile(String),

    #[error("rotated transforms unsupported (rotation terms {rot1}, {rot2})")]
    RotatedTransform { rot1: f64, rot2: f64 },

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("footprint document: {0}")]
    FootprintDocument(String),

    #[error("mixed CRS: expected {expected}, found {found}")]
    MixedCrs { expected: String, found: String },

    #[error("CRS sidecar: {0}")]
    CrsSidecar(String),

    #[error("raster extent {extent_x} x {extent_y} m is smaller than one {tile_size} m tile")]
    ExtentTooSmall {
        extent_x: f64,
        extent_y: f64,
        tile_size: f64,
    },

    #[error("cell ({row}, {col}) outside {n_rows} x {n_cols} grid")]
    CellOutOfRange {
        row: usize,
        col: usize,
        n_rows: usize,
        n_cols: usize,
    },

    #[error("site {0:?} has no split assignment")]
    UnmappedSite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training set needs both classes and at least 2 examples (got {positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("non-finite feature value in example {0}")]
    NonFiniteFeature(usize),

    #[error("feature length mismatch: model expects {expected}, got {found}")]
    FeatureLength { expected: usize, found: usize },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("all weights are zero; no residential area detected")]
    ZeroWeights,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("placement failed for building {building} after {attempts} attempts")]
    PlacementFailed { building: usize, attempts: usize },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("png: {0}")]
    Png(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable kind used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::WorldFile(_) => "world_file",
            Error::RotatedTransform { .. } => "rotated_transform",
            Error::InvalidRaster(_) => "invalid_raster",
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::FootprintDocument(_) => "footprint_document",
            Error::MixedCrs { .. } => "mixed_crs",
            Error::CrsSidecar(_) => "crs_sidecar",
            Error::ExtentTooSmall { .. } => "extent_too_small",
            Error::CellOutOfRange { .. } => "cell_out_of_range",
            Error::UnmappedSite(_) => "unmapped_site",
            Error::EmptyDataset => "empty_dataset",
            Error::SingleClass { .. } => "single_class",
            Error::NonFiniteFeature(_) => "non_finite_feature",
            Error::FeatureLength { .. } => "feature_length",
            Error::ModelFile(_) => "model_file",
            Error::ZeroWeights => "zero_weights",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::PlacementFailed { .. } => "placement_failed",
            Error::Manifest(_) => "manifest",
            Error::Png(_) => "png",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
