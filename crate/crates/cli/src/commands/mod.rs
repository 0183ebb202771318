pub mod evaluate;
pub mod predict;
pub mod report;
pub mod synth;
pub mod train;

use std::path::Path;

use crate::CliError;

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
