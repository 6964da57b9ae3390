//! Pipeline orchestration for the `aos` command-line tool.
//!
//! [`pipeline::run_pipeline`] wires the whole chain together (simulate,
//! capture, focus, integrate, detect, evaluate) and runs it as two arms:
//! integrate-then-detect versus detect-per-single-image. Every run leaves a
//! manifest with content hashes of all written artifacts, the seed, and
//! per-stage timings, so results are attributable and reproducible.

pub mod layout;
pub mod manifest;
pub mod pipeline;
