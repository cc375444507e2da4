use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for CLI exit codes and FFI status values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Assumption,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("block {block} ends on background {right} but block {next} starts on {left}")]
    IncompatibleBackgrounds {
        block: String,
        right: String,
        next: String,
        left: String,
    },
    #[error("spacing pair {index} = ({minus}, {plus}) must consist of integers >= 1")]
    BadSpacing { index: usize, minus: i64, plus: i64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("quadrature produced a non-finite value: {0}")]
    QuadratureFailure(String),
    #[error("expression error: {0}")]
    Expression(String),
    #[error("config error: {0}")]
    Config(String),

    #[error("requested {requested} eigenvalues but only {capacity} are trustworthy")]
    DiscretizationTooCoarse { requested: usize, capacity: usize },
    #[error("band {band} of background {background} is degenerate at tau = {tau} (gap {gap:.3e})")]
    DegenerateBand {
        background: String,
        band: usize,
        tau: f64,
        gap: f64,
    },
    #[error("quasimomentum continuation diverged on background {background}: {detail}")]
    NewtonDivergence { background: String, detail: String },
    #[error("band edge at lambda0 on background {background}: tau = {tau}, dE/dtau = {derivative:.3e}")]
    BandEdgeAt {
        background: String,
        tau: f64,
        derivative: f64,
    },

    #[error("overflow: {0}")]
    Overflow(String),
    #[error("Jordan structure of background {background} not resolvable (cluster diameter {diameter:.3e})")]
    IllConditionedJordan { background: String, diameter: f64 },
    #[error("lambda0 = {lambda0} lies in the essential spectrum of connecting background {background}")]
    Lambda0InMiddleEssentialSpectrum { background: String, lambda0: f64 },

    #[error("no decaying basis on the {side} side (background {background}): lambda is not in a gap")]
    NoDecayingBasis { background: String, side: String },
    #[error("search window of block {block} comes within the band margin of an essential-spectrum edge at {edge}")]
    WindowTouchesBand { block: String, edge: f64 },
    #[error("tail fit for block {block} is ill-conditioned (condition number {condition:.3e})")]
    FitIllConditioned { block: String, condition: f64 },
    #[error("tail remainder of block {block} ({side}) decays at rate {rate:.4}, below the required {required:.4}")]
    RateViolation {
        block: String,
        side: String,
        rate: f64,
        required: f64,
    },

    #[error("N = 0: no bound states at lambda0, so there are no resonances in its vicinity")]
    EmptyProblem,

    #[error("continuation failure: {0}")]
    ContinuationFailure(String),
    #[error("winding number not resolvable on circle of radius {radius:.3e}")]
    WindingUnstable { radius: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            IncompatibleBackgrounds { .. }
            | BadSpacing { .. }
            | InvalidModel(_)
            | Expression(_)
            | Config(_)
            | Json(_) => ErrorKind::Config,
            BandEdgeAt { .. }
            | Lambda0InMiddleEssentialSpectrum { .. }
            | NoDecayingBasis { .. }
            | WindowTouchesBand { .. }
            | DegenerateBand { .. }
            | EmptyProblem => ErrorKind::Assumption,
            _ => ErrorKind::Numerical,
        }
    }

    /// Stable identifier printed in machine-readable diagnostics.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            IncompatibleBackgrounds { .. } => "IncompatibleBackgrounds",
            BadSpacing { .. } => "BadSpacing",
            InvalidModel(_) => "InvalidModel",
            QuadratureFailure(_) => "QuadratureFailure",
            Expression(_) => "Expression",
            Config(_) => "Config",
            DiscretizationTooCoarse { .. } => "DiscretizationTooCoarse",
            DegenerateBand { .. } => "DegenerateBand",
            NewtonDivergence { .. } => "NewtonDivergence",
            BandEdgeAt { .. } => "BandEdgeAt",
            Overflow(_) => "Overflow",
            IllConditionedJordan { .. } => "IllConditionedJordan",
            Lambda0InMiddleEssentialSpectrum { .. } => "Lambda0InMiddleEssentialSpectrum",
            NoDecayingBasis { .. } => "NoDecayingBasis",
            WindowTouchesBand { .. } => "WindowTouchesBand",
            FitIllConditioned { .. } => "FitIllConditioned",
            RateViolation { .. } => "RateViolation",
            EmptyProblem => "EmptyProblem",
            ContinuationFailure(_) => "ContinuationFailure",
            WindingUnstable { .. } => "WindingUnstable",
            InsufficientData(_) => "InsufficientData",
            Numerical(_) => "Numerical",
            Io(_) => "Io",
            Json(_) => "Json",
            Csv(_) => "Csv",
        }
    }

    /// Background id attached to the error, if any.
    pub fn background(&self) -> Option<&str> {
        use Error::*;
        match self {
            DegenerateBand { background, .. }
            | NewtonDivergence { background, .. }
            | BandEdgeAt { background, .. }
            | IllConditionedJordan { background, .. }
            | Lambda0InMiddleEssentialSpectrum { background, .. }
            | NoDecayingBasis { background, .. } => Some(background),
            _ => None,
        }
    }
}
