use std::fmt;

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// `--help` / `--version` output; not a failure.
    Info(String),
    Core(slnet_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(slnet_core::Error::InvalidParam(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Info(msg) => f.write_str(msg),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<slnet_core::Error> for CliError {
    fn from(e: slnet_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<clap::Error> for CliError {
    fn from(e: clap::Error) -> Self {
        use clap::error::ErrorKind;
        let text = e.render().to_string();
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(text),
            _ => CliError::Usage(text),
        }
    }
}
