use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{which} is not a unit vector: norm {norm} (tolerance {tol})")]
    NotUnit { which: &'static str, norm: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("joint density does not integrate to one: total {total}")]
    Normalization { total: f64 },

    #[error("joint density is not symmetric at ({a}, {b}): {ab} vs {ba}")]
    Symmetry { a: String, b: String, ab: f64, ba: f64 },

    #[error("marginal density at point {point} is {value}, must be positive")]
    ZeroMarginal { point: String, value: f64 },

    #[error("clusters do not cover point {point}")]
    ClusterCoverage { point: String },

    #[error("point {point} has label {label} but is not a member of that cluster")]
    LabelOutsideCluster { point: String, label: usize },

    #[error("world schema: {0}")]
    Schema(String),

    #[error("world construction: {0}")]
    Construction(String),

    #[error("sample count {0} is odd; the U-statistic block split needs an even n")]
    OddSampleCount(usize),

    #[error("at least two pairs are needed for the cross term, got {0}")]
    TooFewPairs(usize),

    #[error("encoder is degenerate at point {point}: pre-normalization norm {norm} below floor {floor}")]
    DegenerateEncoder { point: String, norm: f64, floor: f64 },

    #[error("encoder: {0}")]
    Encoder(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("at least two clusters are required, got {0}")]
    TooFewClusters(usize),

    #[error("cluster structure: {0}")]
    Structure(String),

    #[error("cluster assumption fails: {0}")]
    AssumptionViolated(String),

    #[error("equality-case hypotheses fail: {}", .0.join("; "))]
    Hypothesis(Vec<String>),

    #[error("encoder is not meaningful: minimum cluster-mean separation {delta_min} <= {tol}")]
    NotMeaningful { delta_min: f64, tol: f64 },

    #[error("g is constant on cluster {0}: connectivity ratio has a zero denominator")]
    DenominatorZero(usize),

    #[error("partition: {0}")]
    Partition(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
