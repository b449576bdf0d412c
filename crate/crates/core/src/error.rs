use thiserror::Error;

/// Library-wide error type. Variants mirror the failure modes of the
/// individual stages so callers (the CLI in particular) can map them to
/// stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Input geometry cannot be processed (e.g. all points identical).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The symmetrized kNN graph is disconnected; raising `knn_k` usually
    /// fixes it. Component sizes are reported largest first.
    #[error("disconnected knn graph, component sizes {sizes:?}; raise knn_k")]
    DisconnectedGraph { sizes: Vec<usize> },

    /// A non-finite value surfaced where one is not allowed.
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// A training batch became empty after vanishing-gradient exclusion.
    #[error("empty batch after vanishing-gradient exclusion")]
    EmptyBatch,

    /// The scalar grid has no zero crossing. Distinguished from failure:
    /// the field is valid, there is just no surface to extract.
    #[error("no zero crossing in grid: empty mesh")]
    EmptyMesh,

    /// A mesh with zero total area cannot be sampled.
    #[error("degenerate mesh: zero total surface area")]
    DegenerateMesh,

    /// A part has fewer than 4 non-coplanar vertices; a bounding
    /// tetrahedron was substituted where the API allows it.
    #[error("degenerate part: {0}")]
    DegeneratePart(String),

    /// Volumetric IoU requires watertight input.
    #[error("mesh is not watertight: {0}")]
    NonWatertight(String),

    /// Malformed file contents (xyz, ply, obj, checkpoint, table, config).
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
