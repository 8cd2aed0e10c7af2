//! File formats and run-time configuration.

mod bytes;
pub mod dump;
pub mod model_file;
pub mod presets;

pub use dump::{load_dump, open_dump, save_dump, write_dump, DumpHeader, DumpReader};
pub use model_file::{load_model, read_model, save_model, write_model};
pub use presets::{preset, ModelSize, PRESET_TABLE};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "DESMOOTH_THREADS";

/// Worker count requested through [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
