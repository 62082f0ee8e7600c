//! Command-line laboratory around `nematic-core`: configuration, file formats,
//! a rayon executor, the run commands and the acceptance suite.

pub mod config;
pub mod io;
pub mod par;
pub mod run;
pub mod validate;

use nematic_core::error::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Core(#[from] nematic_core::error::Error),
    #[error("thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

impl RunError {
    /// 1 for configuration and input errors, 2 for numerical failures, 3 for
    /// resolution and budget limits.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Core(e) => match e.class() {
                ErrorClass::Input => 1,
                ErrorClass::Numeric => 2,
                ErrorClass::Resource => 3,
            },
            RunError::Threads(_) => 3,
        }
    }
}
