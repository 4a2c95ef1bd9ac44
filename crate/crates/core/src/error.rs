use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("numerical overflow in loss")]
    LossOverflow,
    #[error("empty evaluation set")]
    EmptyEvaluationSet,
    #[error("forward blow-up at layer {layer}")]
    ForwardBlowUp { layer: usize },
    #[error("adjoint blow-up at layer {layer}")]
    AdjointBlowUp { layer: usize },
    #[error("relaxation blow-up at level {level}, layer {layer}")]
    RelaxationBlowUp { level: usize, layer: usize },
    #[error("split of {requested} samples exceeds dataset size {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("at nested level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_level(self, level: usize) -> Self {
        Error::AtLevel {
            level,
            source: alloc::boxed::Box::new(self),
        }
    }
}
