use thiserror::Error;

/// Errors produced by simulation, estimation and verification routines.
#[derive(Error, Debug)]
pub enum SimError {
    #[error("offspring distribution has empty support")]
    EmptySupport,

    #[error("offspring weight for k={k} is negative ({weight})")]
    NegativeWeight { k: u32, weight: f64 },

    #[error(
        "offspring distribution has p_1 > 0; absorb single-child events into \
         the motion (rate change) before building the model"
    )]
    PositiveP1,

    #[error("offspring mean is zero; size-biased sampling undefined")]
    ZeroMean,

    #[error("population cap exceeded after {nodes} nodes")]
    PopulationCapExceeded {
        nodes: usize,
        /// Genealogy generated so far, truncated at the cap.
        partial: Option<Box<crate::gw_tree::GWTree>>,
    },

    #[error("query time {t} is beyond the simulated horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },

    #[error("node is not alive at the query time")]
    NotAlive,

    #[error("motion produced a non-finite state")]
    NonFiniteState,

    #[error("branching kernel does not support offspring count k={k}")]
    KernelArityMismatch { k: u32 },

    #[error("operation requires a supercritical offspring law (m > 1), got m={m}")]
    Subcritical { m: f64 },

    #[error("offspring support has no k >= 2; fork functionals are identically zero")]
    DegeneratePairs,

    #[error("path states were not recorded at the requested resolution")]
    PathsNotRecorded,

    #[error("all replicas went extinct before the observation time")]
    AllExtinct,

    #[error("auxiliary process exceeded |y| = {bound:e}; parameters are likely non-ergodic")]
    DivergenceDetected { bound: f64 },

    #[error("quadrature under-resolved: doubling the grid moved the estimate by {shift:.3} se")]
    QuadratureUnderResolved { shift: f64 },

    #[error("time grid under-resolved: halving the step moved the variance by {rel_shift:.4}")]
    GridUnderResolved { rel_shift: f64 },

    #[error("both estimates have zero variance but unequal means")]
    ZeroVarianceBothSides,

    #[error("unknown model `{name}`")]
    UnknownModel { name: String },

    #[error("invalid model parameters: {reason}")]
    InvalidParameters { reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown plot series `{0}`")]
    UnknownSeries(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
