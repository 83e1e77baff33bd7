use std::fmt;
use std::path::Path;

/// A failure reported as one `error[kind]: message` line plus an exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        Self::new(1, "runtime", m)
    }

    pub fn usage(m: impl Into<String>) -> Self {
        Self::new(2, "usage", m)
    }

    pub fn input(m: impl Into<String>) -> Self {
        Self::new(2, "input", m)
    }

    pub fn output(m: impl Into<String>) -> Self {
        Self::new(3, "output", m)
    }

    pub fn csv(m: impl Into<String>) -> Self {
        Self::new(4, "csv", m)
    }

    pub fn checkpoint(m: impl Into<String>) -> Self {
        Self::new(5, "checkpoint", m)
    }

    /// Maps a library error; I/O failures under any of `outputs` count as
    /// unwritable output, other I/O failures as bad input.
    pub fn from_core(e: ssrgan::Error, outputs: &[&Path]) -> Self {
        use ssrgan::Error as E;
        let text = e.to_string();
        match e {
            E::Io { path, .. } if outputs.iter().any(|o| path.starts_with(o)) => Self::output(text),
            E::Io { .. } => Self::input(text),
            E::Checkpoint(_) => Self::checkpoint(text),
            E::Config(_) | E::Range(_) => Self::usage(text),
            E::EmptyInput(_) | E::EmptyDataset(_) | E::Format(_) => Self::input(text),
            _ => Self::runtime(text),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}]: {one_line}", self.kind)
    }
}

/// Creates `dir` or fails with exit code 3.
pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::output(format!("cannot create {}: {e}", dir.display())))
}
