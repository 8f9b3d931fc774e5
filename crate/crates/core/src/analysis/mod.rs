//! Meta-regression over experiment results, exact t-SNE, k-means purity and
//! projection outputs.

mod cluster;
mod projection;
mod regression;
mod tsne;

pub use cluster::{cluster_purity, kmeans, nearest_centroid_purity, KMeans, KMEANS_RESTARTS};
pub use projection::{
    projection_csv, projection_svg, sample_projection_inputs, stratified_sample, ProjectionInputs,
};
pub use regression::{
    ablate, fit_ols, regression_rows, render_regression_report, select_features, DesignMatrix, FactorGroup,
    RegressionResult, RegressionRow, ABLATIONS, DEFAULT_THRESHOLD, INTERCEPT,
};
pub use tsne::{affinities, pca, tsne, Affinities, Projection2D, TsneConfig, AFFINITY_FLOOR};
