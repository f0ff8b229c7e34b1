//! Error categories and their exit codes.

use std::fmt;

use crate::config::ConfigError;
use crate::imgio::ImageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Other,
    Config,
    Io,
    Divergence,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Other => 1,
            Category::Config => 2,
            Category::Io => 3,
            Category::Divergence => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(category: Category, error: impl Into<anyhow::Error>) -> Self {
        Self {
            category,
            error: error.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Category::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            category: self.category,
            error: self.error.context(msg),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub fn core_category(e: &redip_core::Error) -> Category {
    use redip_core::Error as E;
    match e {
        _ if e.is_numeric() => Category::Divergence,
        E::Io(_) | E::Format(_) | E::Version { .. } | E::Truncated(_) | E::DuplicateName(_) | E::MissingLayer(_) => {
            Category::Io
        }
        E::Topology(_) | E::Shape { .. } | E::InvalidArgument(_) => Category::Config,
        _ => Category::Other,
    }
}

impl From<redip_core::Error> for CliError {
    fn from(e: redip_core::Error) -> Self {
        Self::new(core_category(&e), e)
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        let category = match &e {
            ImageError::Tensor(inner) => core_category(inner),
            _ => Category::Io,
        };
        Self::new(category, e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let category = match &e {
            ConfigError::Io(_) => Category::Io,
            _ => Category::Config,
        };
        Self::new(category, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Category::Io, e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
