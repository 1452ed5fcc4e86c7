use alloc::string::String;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("attribute {index} (`{name}`) occurs in no annotation")]
    ZeroSupport { index: usize, name: String },
    #[error("row {0} of the co-occurrence matrix sums to zero")]
    DegenerateRow(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid synthetic dataset: {0}")]
    Dataset(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
