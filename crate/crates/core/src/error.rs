use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative rotor thrust")]
    NegativeThrust,
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("launcher geometry has no contact chord (l_off >= r_f + r_b)")]
    NoContact,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("trajectories have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("environment step called after the episode ended")]
    StepAfterDone,
    #[error("environment step called before reset")]
    NotReset,
    #[error("observation must have {expected} entries, got {got}")]
    ObservationSize { expected: usize, got: usize },
    #[error("parameter shape mismatch: {0}")]
    Shape(&'static str),
    #[error("non-finite loss, update aborted")]
    NonFiniteLoss,
}

pub(crate) fn ensure(cond: bool, name: &'static str, reason: &'static str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason })
    }
}
