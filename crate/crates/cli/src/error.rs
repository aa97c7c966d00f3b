use h2h_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] h2h_core::Error),
}

impl CliError {
    /// 1 for configuration, 2 for input data, 3 for numerical failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}
