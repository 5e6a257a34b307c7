//! Receptive-field localization of first-layer masks: pair-displacement
//! correlation of a unit's kept pixels, its 2D Gaussian fit, and per-round
//! width summaries.

mod correlation;
mod fit;
mod report;

pub use correlation::{correlation_map, infer_n_p, pixel_support, ChannelMode, CorrelationMap};
pub use fit::{fit_gaussian2d, fit_points, GaussianFit, FIT_MAX_ITERATIONS, FIT_REL_TOL};
pub use report::{
    rf_width_report, select_top_units, unit_maps, write_pgm, DEFAULT_TOP_UNITS, LocalizationReport, RoundWidthSummary, UnitFit,
};
