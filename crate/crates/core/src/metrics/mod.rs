//! Segmentation metrics: Dice, surface distances, volume ratio and paired
//! significance tests.
//!
//! Distances are in mm using the ground-truth spacing. Surfaces are
//! 6-connected boundary voxels.

mod distance;
mod mask;
mod overlap;
mod report;
mod stats;
mod surface;

pub use distance::{hausdorff, hd95, msd, surface_size, DirectedDistances};
pub use mask::BinaryMask;
pub use overlap::{dice, volume_ratio};
pub use report::{
    build_case_report, build_report, compare_reports, ClassMetrics, ClassSummary, Comparison, DatasetReport, Metric,
    MetricComparison, MetricSummary, MetricsReport, FLAG_ABSENT_IN_PREDICTION, FLAG_ABSENT_IN_TRUTH,
};
pub use stats::{paired_t_test, MeanStd, PairedTTestResult};
pub use surface::{distance_transform, extract_surface, squared_edt, SurfacePointSet};
