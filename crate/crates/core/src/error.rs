use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("domain {0} is not stored in the style memory")]
    UnknownDomain(u32),
    #[error("scene placement failed after {0} attempts")]
    Placement(usize),
    #[error("domain {domain}, {stage}: {source}")]
    Stage {
        domain: usize,
        stage: &'static str,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn in_stage(self, domain: usize, stage: &'static str) -> Self {
        Error::Stage {
            domain,
            stage,
            source: alloc::boxed::Box::new(self),
        }
    }
}
