use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] nonlocal_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("missing artifact {path}; run the `{stage}` stage first")]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: PathBuf, reason: String },

    #[error("radius selector table exhausted at t = {t}; extend run.radii")]
    SelectorExhausted { t: f64 },

    #[error("no eigenpair for R = {radius} in the eigen artifacts")]
    MissingRadius { radius: f64 },

    #[error("resume refused: {dir} was produced with a different configuration")]
    ConfigChanged { dir: PathBuf },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("cannot build the worker pool: {0}")]
    ThreadPool(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VALIDATION: i32 = 2;
    pub const INVARIANT: i32 = 3;
    pub const RESOURCE: i32 = 4;
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> HarnessError {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use nonlocal_core::Error as E;
        match self {
            Self::Config(_)
            | Self::MissingArtifact { .. }
            | Self::SelectorExhausted { .. }
            | Self::MissingRadius { .. }
            | Self::ConfigChanged { .. } => exit::VALIDATION,
            Self::Invariant(_) => exit::INVARIANT,
            Self::Io { .. } | Self::Csv(_) | Self::Json(_) | Self::MalformedArtifact { .. } | Self::ThreadPool(_) => {
                exit::RESOURCE
            }
            Self::Core(e) => match e {
                E::InvalidParameter { .. }
                | E::CoarseStencil { .. }
                | E::SpacingMismatch { .. }
                | E::DimensionMismatch { .. }
                | E::EmptyBall { .. }
                | E::EmptyAnnulus { .. }
                | E::DomainTooSmall { .. }
                | E::TooFewSamples { .. } => exit::VALIDATION,
                E::GridTooLarge { .. } | E::MassLoss { .. } | E::Io(_) | E::Json(_) | E::MalformedDump(_) => {
                    exit::RESOURCE
                }
                _ => exit::INVARIANT,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let cfg = HarnessError::Config(ConfigError { problems: vec![] });
        assert_eq!(cfg.exit_code(), 2);
        let mp = HarnessError::Core(nonlocal_core::Error::MaximumPrinciple {
            t: 1.0,
            index: 0,
            value: -1.0,
            upper: 1.0,
        });
        assert_eq!(mp.exit_code(), 3);
        let big = HarnessError::Core(nonlocal_core::Error::GridTooLarge { nodes: 1, budget: 0 });
        assert_eq!(big.exit_code(), 4);
        assert_eq!(HarnessError::io("x", std::io::Error::other("full")).exit_code(), 4);
    }
}
