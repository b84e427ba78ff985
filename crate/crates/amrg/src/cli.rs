//! Command implementations behind the `amrg` binary.

use crate::error::Result;

/// Process exit codes: 0 success, 1 usage or I/O error, 2 validation
/// failure.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

pub fn placeholder() -> Result<()> {
    Ok(())
}
