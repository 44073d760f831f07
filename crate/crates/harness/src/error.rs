use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigErrors;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),

    #[error("{experiment}: {source}")]
    Numeric {
        experiment: String,
        #[source]
        source: cogd_core::Error,
    },

    #[error("{experiment}: {source}")]
    Core {
        experiment: String,
        #[source]
        source: cogd_core::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn core(experiment: &str, source: cogd_core::Error) -> Self {
        if source.is_numeric() {
            HarnessError::Numeric {
                experiment: experiment.to_string(),
                source,
            }
        } else {
            HarnessError::Core {
                experiment: experiment.to_string(),
                source,
            }
        }
    }

    /// Process exit status: 2 config, 3 numeric, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core { .. } => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::Io { .. } | HarnessError::Format(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Core { .. } => "invalid-input",
            HarnessError::Numeric { .. } => "numeric",
            HarnessError::Io { .. } => "io",
            HarnessError::Format(_) => "format",
        }
    }

    /// One line of JSON for machine consumers.
    pub fn to_json_line(&self) -> String {
        let mut obj = serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let HarnessError::Config(errs) = self {
            obj["details"] = serde_json::Value::Array(
                errs.0
                    .iter()
                    .map(|e| {
                        serde_json::json!({
                            "location": e.location.to_string(),
                            "key": e.key,
                            "message": e.message,
                        })
                    })
                    .collect(),
            );
        }
        obj.to_string()
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
