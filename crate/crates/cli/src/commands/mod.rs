//! One module per subcommand. Each `run` reads its inputs from the loaded
//! config, writes its outputs under `output_dir` and finishes with a manifest.

pub mod analyze;
pub mod caption;
pub mod fit;
pub mod synth;
