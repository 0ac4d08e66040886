use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Orbital or mode index outside `1..=K`.
    #[error("index {index} out of range for order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    /// Two chains (or a chain and an operator) disagree on length or mode sizes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A dense evaluation would exceed the desk-scale memory guard.
    #[error("order {order} exceeds the dense evaluation guard of {max}")]
    DenseGuard { order: usize, max: usize },

    /// Operator has off-sector mass and cannot be treated as particle
    /// number preserving.
    #[error("not particle-number preserving: off-sector mass {mass:.3e} exceeds {tol:.3e}")]
    NotNumberPreserving { mass: f64, tol: f64 },

    /// A full MPS fed to the block-structure detection is not (close enough
    /// to) an eigenvector of the particle number operator.
    #[error("not in sector {sector}: residual block mass {mass:.3e} exceeds {tol:.3e}")]
    NotInSector { sector: usize, mass: f64, tol: f64 },

    /// Truncation threshold at least as large as the norm of the tensor.
    #[error("truncation with eps {eps:.3e} >= norm {norm:.3e} would truncate to zero")]
    TruncateToZero { eps: f64, norm: f64 },

    /// Mismatched particle sectors between two block MPS.
    #[error("sector mismatch: ({k1}, {n1}) vs ({k2}, {n2})")]
    SectorMismatch { k1: usize, n1: usize, k2: usize, n2: usize },

    /// Requested block sizes exceed the admissible bound.
    #[error("block size cap violated at (k={k}, n={n}): {requested} > {cap}")]
    BlockSizeCap { k: usize, n: usize, requested: usize, cap: usize },

    /// A symbolic operator program has no consistent flux labelling with
    /// terminal flux zero.
    #[error("flux-invalid symbolic program: {0}")]
    FluxInvalid(String),

    /// Construction restricted to even K.
    #[error("unsupported order {order}: construction requires even K >= {min}")]
    UnsupportedOrder { order: usize, min: usize },

    /// Operation undefined on the zero vector.
    #[error("zero vector")]
    ZeroVector,

    /// A Riemannian retraction would collapse a sector to size zero.
    #[error("sector collapse at bond {bond}, sector {sector}")]
    SectorCollapse { bond: usize, sector: usize },

    /// Coefficient-file or container parse failure.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("container error: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, Error>;
