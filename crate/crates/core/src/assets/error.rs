use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssetErrorKind {
    Syntax,
    Bounds,
    Invariant,
    Io,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(usize),
    Unknown,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Line(l) => write!(f, "line {l}"),
            Location::Offset(o) => write!(f, "byte {o}"),
            Location::Unknown => write!(f, "unknown location"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{kind:?} error{}: {message}", at(location))]
pub struct AssetError {
    pub kind: AssetErrorKind,
    pub location: Location,
    pub message: String,
}

fn at(location: &Location) -> String {
    match location {
        Location::Unknown => String::new(),
        known => format!(" at {known}"),
    }
}

impl AssetError {
    pub fn new(kind: AssetErrorKind, location: Location, message: impl Into<String>) -> Self {
        AssetError {
            kind,
            location,
            message: message.into(),
        }
    }

    pub fn syntax_at_line(line: usize, message: impl Into<String>) -> Self {
        Self::new(AssetErrorKind::Syntax, Location::Line(line), message)
    }

    pub fn bounds_at(offset: usize, message: impl Into<String>) -> Self {
        Self::new(AssetErrorKind::Bounds, Location::Offset(offset), message)
    }

    pub fn invariant(message: impl Into<String>) -> Self {
        Self::new(AssetErrorKind::Invariant, Location::Unknown, message)
    }

    pub fn io(err: std::io::Error, path: &std::path::Path) -> Self {
        Self::new(
            AssetErrorKind::Io,
            Location::Unknown,
            format!("{}: {err}", path.display()),
        )
    }
}

impl From<crate::error::Error> for AssetError {
    fn from(e: crate::error::Error) -> Self {
        match e {
            crate::error::Error::Asset(a) => a,
            other => AssetError::invariant(other.to_string()),
        }
    }
}
