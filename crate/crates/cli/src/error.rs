//! Error classification and exit codes.

use std::fmt;

use gsanim_core::assets::AssetError;
use gsanim_core::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Asset,
    Numeric,
    Invariant,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Asset => 3,
            Kind::Numeric => 4,
            Kind::Invariant => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Asset => "asset",
            Kind::Numeric => "numeric",
            Kind::Invariant => "invariant",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
    /// Extra lines for humans.
    pub detail: Vec<String>,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            detail: Vec::new(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn with_detail(mut self, line: impl Into<String>) -> Self {
        self.detail.push(line.into());
        self
    }

    /// First stderr line: one JSON object, no embedded newlines.
    pub fn machine_line(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind.name(),
                "exit_code": self.kind.exit_code(),
                "message": self.message,
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error ({}): {}", self.kind.name(), self.message)?;
        for line in &self.detail {
            write!(f, "\n  {line}")?;
        }
        Ok(())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => Kind::Usage,
            Error::Asset(_) => Kind::Asset,
            Error::Numeric(_) => Kind::Numeric,
            Error::Invariant(_) | Error::NonUnitQuaternion { .. } | Error::NonRigidTransform { .. } => Kind::Invariant,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<AssetError> for CliError {
    fn from(e: AssetError) -> Self {
        CliError::new(Kind::Asset, e.to_string())
    }
}

/// Attaches the file a failure came from.
pub trait Context<T> {
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for Result<T, E> {
    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|e| {
            let mut e = e.into();
            if !e.message.contains(what) {
                e.message = format!("{what}: {}", e.message);
            }
            e
        })
    }
}
