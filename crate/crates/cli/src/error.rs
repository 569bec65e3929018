use std::fmt;

use dualmoco::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Numerical(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "invalid arguments: {m}"),
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::Io(m) => write!(f, "i/o failure: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e.root() {
            Error::ConfigInvalid { .. } | Error::NonPositiveTemperature(_) => CliError::Config(message),
            Error::Io(_)
            | Error::File { .. }
            | Error::Parse { .. }
            | Error::Format(_)
            | Error::Json(_)
            | Error::EmptyCorpus => CliError::Io(message),
            Error::NumericalFailure(_) => CliError::Numerical(message),
            _ => CliError::Other(message),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(Error::Io(io)).exit_code(), 3);
        assert_eq!(CliError::from(Error::NonPositiveTemperature(0.0)).exit_code(), 2);
        assert_eq!(CliError::from(Error::NumericalFailure("nan".into())).exit_code(), 4);
        assert_eq!(CliError::from(Error::EmptySide).exit_code(), 1);
    }
}
