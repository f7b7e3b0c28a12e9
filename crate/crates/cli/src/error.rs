use contractsolve_core::error::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error: {field}: {detail}")]
    Validation { field: String, detail: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: CoreError,
    },
}

impl CliError {
    pub fn solver(context: impl Into<String>) -> impl FnOnce(CoreError) -> CliError {
        let context = context.into();
        move |source| CliError::Solver { context, source }
    }

    /// 2 for an infeasible budget, 3 when the solver gives up, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver {
                source: CoreError::Infeasible { .. },
                ..
            } => 2,
            CliError::Solver {
                source: CoreError::NoConvergence { .. },
                ..
            } => 3,
            _ => 1,
        }
    }
}
