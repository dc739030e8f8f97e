use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
    #[error("ply: {0}")]
    Ply(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("trajectory export: {0}")]
    Export(String),
    #[error(transparent)]
    Core(#[from] gsplan_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |err| Error::Io { path: path.to_path_buf(), err }
}
