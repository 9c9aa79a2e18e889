use std::fmt;

/// A failure tagged with the pipeline stage that produced it.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(stage: &'static str, message: impl Into<String>) -> Self {
        CliError { stage, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::new("usage", message)
    }

    pub fn is_usage(&self) -> bool {
        self.stage == "usage"
    }

    /// `error: <stage>: <message>` on one line.
    pub fn line(&self) -> String {
        let msg: Vec<&str> = self.message.split_whitespace().collect();
        format!("error: {}: {}", self.stage, msg.join(" "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

/// Attaches a stage name to library errors.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: fmt::Display> Stage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::new(stage, e.to_string()))
    }
}
