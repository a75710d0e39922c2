mod contour;
mod features;
mod forest;
mod fractal;
mod geometry;
mod moments;
mod select;

pub use contour::{extract_boundary, largest_component, Boundary};
pub use features::{extract_features, feature_columns, FeatureGroup, FeatureTable, FeatureVector, GROUP_COLUMNS, RAW_HU_COLUMNS};
pub use forest::{rf_predict, rf_train, ForestConfig, Node, RandomForest, Tree};
pub use fractal::{box_count, fractal_dimension, lacunarity, lacunarity_at, FractalDimension, BOX_SIZES, LACUNARITY_SCALES};
pub use geometry::{contour_perimeter, convex_hull, geometry_features, polygon_area, polygon_perimeter, Geometry};
pub use moments::{central_moments, log_compress, moment_features, CentralMoments, MomentFeatures, NormalizedMoments};
pub use select::{
    classify_evaluate, cv_accuracy, cv_folds, cv_predict, efs_select, encode_labels, ClassificationReport, CvScheme, EfsResult,
    SubsetScore, MAX_GROUPS,
};
