//! Library side of the `covsteer` command-line tool: problem-file parsing,
//! CSV/JSON artifact writers and one function per subcommand.

pub mod commands;
pub mod output;
pub mod problem;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 0 success, 1 input error, 2 infeasible/inadmissible, 3 solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<covsteer::Error> for CliError {
    fn from(e: covsteer::Error) -> Self {
        use covsteer::Error as E;
        match e {
            E::NotControllable | E::Infeasible(_) => CliError::Infeasible(e.to_string()),
            E::NoConvergence(_) | E::InflationLimit(_) | E::FiniteEscape { .. } | E::Singular(_) => CliError::Solver(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}
