//! Multi-way fixed-effects estimation on three-dimensional panels, with analytical
//! incidental-parameter bias corrections and a Monte Carlo harness.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! bottom of this file fix it to `f64`.

mod debias;
mod dense;
mod error;
mod family;
mod io;
mod linalg;
mod montecarlo;
mod panel;
mod projection;
mod scalar;
mod solver;
mod spec;
mod sweep;

pub use debias::{
    bias_report, bias_reports, bias_terms, compute_bias_components, compute_v_hat, compute_w_hat, debias, dims_of,
    select_components, standard_errors, BandwidthRule, BiasComponents, BiasReport, BiasTerms, ComponentSet, Dims,
};
pub use dense::{dense_oracle_fit, dense_oracle_fit_direct, dense_wls_fitted, ORACLE_MAX_LEVELS, ORACLE_MAX_OBS};
pub use error::{Error, ErrorClass, Result};
pub use family::{eval_derivatives, link_mean, DerivativeArrays, Family};
pub use io::{read_panel_csv, read_panel_csv_file, read_panel_csv_with_names, write_panel_csv};
pub use linalg::{Cholesky, Matrix};
pub use montecarlo::{
    generate, generate_detailed, parse_summary_csv, run, run_replication, run_with_progress, summarize,
    summarize_to_table, Dgp, Estimator, Generated, Replication, SimConfig, SimSummary, SummaryRow, TableFormat,
    COEFFICIENTS,
};
pub use panel::{build_pair_set, double_undirected, validate, PairSet, PanelDataset, Row, Structure, ValidatedPanel};
pub use projection::{
    ols_between_transform, project_fit, residual_arrays, wls_project, wls_project_with, ProjectedRegressors,
    WeightedResidualArrays, WLS_MAX_SWEEPS, WLS_TOL,
};
pub use scalar::Scalar;
pub use solver::{fit, inner_fe_solve, normalize_phi, Backend, FitOptions, FitResult, SeparationPolicy};
pub use spec::{
    spec_dimensions, BlockKey, BlockSpec, ConstraintSystem, Design, FeBlock, FeSpec, SpecDimensions, SpecId,
};

pub type Panel = PanelDataset<f64>;
pub type Validated = ValidatedPanel<f64>;
pub type Fit = FitResult<f64>;
pub type Report = BiasReport<f64>;
