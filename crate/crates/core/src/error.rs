use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(
        "singular attitude: cos(theta) = {cos_theta:.3e} is within the guard margin {margin:.1e}"
    )]
    SingularAttitude { cos_theta: f64, margin: f64 },

    #[error(
        "vehicle parameters: effective mass/inertia {name} = {value} must be strictly positive"
    )]
    NonPositiveEffectiveMass { name: &'static str, value: f64 },

    #[error("vehicle parameters: {0}")]
    InvalidParams(String),

    #[error("integration step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular spherical transform: cos(theta')cos(psi') = {value:.3e} is within the guard margin {margin:.1e}")]
    SingularTransform { value: f64, margin: f64 },

    #[error("connectivity assumption violated: the undirected support of the communication graph is disconnected")]
    DisconnectedGraph,

    #[error(
        "pinning assumption violated: no vehicle receives the reference trajectory (all b_i = 0)"
    )]
    NoPinnedVehicle,

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("vehicle index {index} out of range for a fleet of {n}")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("formation offset missing for edge ({i}, {j})")]
    MissingDelta { i: usize, j: usize },

    #[error("invalid formation: {0}")]
    InvalidFormation(String),

    #[error("virtual gain must be strictly positive, got {0}")]
    NonPositiveGain(f64),

    #[error("invalid gain problem: {0}")]
    InvalidProblem(String),

    #[error("invalid controller gains: {0}")]
    InvalidGains(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(
        "disturbance bound exceeded: sup |d| <= {bound:.4} exceeds the configured cap {cap:.4}"
    )]
    DisturbanceCapExceeded { bound: f64, cap: f64 },

    #[error("empty simulation log")]
    EmptyLog,
}
