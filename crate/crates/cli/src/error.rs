//! Error categories and their process exit codes.

use std::fmt;

/// Errors raised by the driver itself rather than the library.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or out-of-range configuration.
    Config(String),
    /// Input data that cannot be used (missing files, mismatched frames).
    Input(String),
    /// One or more self-test suites failed.
    SelfTest(usize),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Input(m) => write!(f, "{m}"),
            CliError::SelfTest(n) => write!(f, "{n} self-test suite(s) failed"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Other,
    Io,
    Config,
    Format,
    Incompatible,
    Training,
    Sampler,
    Input,
    SelfTest,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Other => "other",
            Category::Io => "io",
            Category::Config => "config",
            Category::Format => "format",
            Category::Incompatible => "incompatible",
            Category::Training => "training",
            Category::Sampler => "sampler",
            Category::Input => "input",
            Category::SelfTest => "selftest",
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Category::Other => 1,
            Category::Io => 3,
            Category::Config => 4,
            Category::Format => 5,
            Category::Incompatible => 6,
            Category::Training => 7,
            Category::Sampler => 8,
            Category::Input => 9,
            Category::SelfTest => 10,
        }
    }
}

/// Category of the first recognizable cause in the error chain.
pub fn categorize(err: &anyhow::Error) -> Category {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => Category::Config,
                CliError::Input(_) => Category::Input,
                CliError::SelfTest(_) => Category::SelfTest,
            };
        }
        if let Some(e) = cause.downcast_ref::<r3d::Error>() {
            return match e {
                r3d::Error::Parameter(_) => Category::Config,
                r3d::Error::Format { .. } | r3d::Error::UnsupportedVersion { .. } => Category::Format,
                r3d::Error::Incompatible(_) | r3d::Error::Shape { .. } => Category::Incompatible,
                r3d::Error::Training { .. } => Category::Training,
                r3d::Error::Sampler { .. } => Category::Sampler,
                r3d::Error::Io(_) => Category::Io,
                r3d::Error::EmptySet(_) => Category::Input,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return Category::Io;
        }
    }
    Category::Other
}

/// One-line, machine-parsable rendering: `error[category]: message`.
pub fn render(err: &anyhow::Error) -> String {
    let msg: Vec<String> = err.chain().map(|c| c.to_string()).collect();
    format!("error[{}]: {}", categorize(err).name(), msg.join(": ").replace('\n', " "))
}
