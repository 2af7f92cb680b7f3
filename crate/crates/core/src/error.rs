use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid policy parameters: {0}")]
    Params(String),
    #[error("invalid prompt {id}: {reason}")]
    Prompt { id: String, reason: String },
    #[error("response is empty")]
    EmptyResponse,
    #[error("token {token} is outside the vocabulary of size {size}")]
    TokenOutOfRange { token: u32, size: usize },
    #[error("prompt context has {len} tokens but the policy order is {order}")]
    ContextTooShort { len: usize, order: usize },
    #[error("group has {0} members, at least 2 are required")]
    GroupTooSmall(usize),
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("prompt {0} has no reference answer")]
    MissingReference(String),
    #[error("group was sampled under snapshot {found:#018x}, expected {expected:#018x}")]
    StaleSnapshot { expected: u64, found: u64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("edit script contains no changes")]
    NoEdits,
    #[error("edit script over an empty source contains changes")]
    EmptySource,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid world: {0}")]
    World(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
