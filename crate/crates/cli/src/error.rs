use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] pmp_core::Error),
}

impl CliError {
    /// 0 ok, 1 internal, 2 configuration, 3 escape, 4 budget exhausted.
    pub fn exit_code(&self) -> u8 {
        use pmp_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e {
                E::Escaped { .. } | E::EscapedNeighborhood => 3,
                E::BudgetExhausted { .. } => 4,
                E::PerturbationTooLarge { .. } | E::UnknownCatalog(_) | E::DimensionMismatch { .. } => 2,
                _ => 1,
            },
        }
    }
}
