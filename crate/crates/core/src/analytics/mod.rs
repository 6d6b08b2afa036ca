//! Cohort analyses on fitted models: trend percentiles, outliers,
//! clustering and forecasting.

pub mod distance;
pub mod forecast;
pub mod kmeans;
pub mod stats;

pub use distance::masked_distance;
pub use forecast::{
    evaluate_forecast, fit_coefficients_fixed_basis, kr_forecast, kr_raw, mean_baseline, run_forecast,
    ForecastOptions, ForecastReport, ForecastTask, KrPrediction, Method, MethodSummary, Metric, SubjectForecast,
};
pub use kmeans::{adjusted_rand_index, kmeans, ClusterAssignment, ClusterSpace, KMeansOptions};
pub use stats::{
    cohort_median, component_median, detect_outliers, percentile, trend_stats, trend_stats_at, OutlierReport,
    TrendStats, DEFAULT_OUTLIER_PERCENTILE, TREND_LEVELS,
};

/// Components used for clustering when none are given (0-based).
pub const DEFAULT_COMPONENTS: [usize; 3] = [0, 1, 2];
