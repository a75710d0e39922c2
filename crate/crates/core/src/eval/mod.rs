mod metrics;
mod morphology;
mod report;

pub use metrics::{
    boxplot_summary, mean_std, quantile, seg_metrics, BoxplotSummary, ConfusionCounts, MeanStd, SegMetrics, METRIC_NAMES,
};
pub use morphology::{close, dilate, erode, postprocess, postprocess_mask, Element, CLOSING_ELEMENT, EROSION_ELEMENT, THRESHOLD};
pub use report::{evaluate_dir, evaluate_pairs, EvalReport};
