use crate::dsl::DslError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("point {0:?} is outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("metric is not positive definite or is ill-conditioned at {point:?} (condition estimate {cond:.3e})")]
    NotSpd { point: Vec<f64>, cond: f64 },
    #[error("curve left the domain at parameter s = {s} near {point:?}")]
    DomainExit { s: f64, point: Vec<f64> },
    #[error("integrator exhausted its budget of {0} steps")]
    StepLimit(usize),
    #[error("principal logarithm undefined: rotation angle {0} is not below pi")]
    LogBranch(f64),
    #[error("dimension budget exceeded: total dimension {0} is above {1}")]
    Budget(usize, usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
