//! Gray-box real-valued optimization with RV-GOMEA and iRV-GOMEA.
//!
//! - [`problems`]: benchmark objectives built from subfunctions, with
//!   partial evaluation and fractional cost accounting.
//! - [`linkage`]: dependency tests, interaction graphs and linkage models.
//! - [`distribution`]: per-linkage-set Gaussian estimation, incremental
//!   updates, AMS and adaptive variance scaling.
//! - [`optimizer`]: the generation loop.
//! - [`rates`]: learning-rate tuning and regression.
//! - [`harness`]: replicate sweeps, bisection and result files.

pub mod distribution;
pub mod linkage;
pub mod optimizer;
pub mod problems;
pub mod harness;
pub mod rates;
