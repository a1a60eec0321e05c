//! Comparison points: the per-matrix oracle, prediction-based TE, the
//! tabular and normalized subgradient methods, and a brute-force grid oracle.

mod grid;
mod linreg;
mod oracle;
mod sgd;

pub use grid::{grid_search_oracle, GRID_DIMENSION_LIMIT};
pub use linreg::{linreg_fit, linreg_predict, prediction_based_te, LinRegPredictor};
pub use oracle::{oracle_optimize, OracleMethod, OracleOptions, OracleSolution};
pub use sgd::{
    flow_normalized_ascent, normalized_subgradient_ascent, project_to_simplex, tabular_sgd,
    AscentResult, HistoryIndex, NormalizedSgdParams, TabularPolicy, TheoryBounds,
};
