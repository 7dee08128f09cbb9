//! Statistical evaluation: discrimination, agreement, calibration,
//! bootstrap intervals and contingency tests.

pub mod agreement;
pub mod bootstrap;
pub mod borderline;
pub mod calibration;
pub mod fisher;
pub mod metrics;
pub mod report;

pub use agreement::{cross_scanner_agreement, mean_pairwise_kappa, pairwise_kappa_matrix, CrossScannerAgreement, RaterPanel};
pub use bootstrap::{bootstrap_ci, BootstrapResult, MetricEstimate};
pub use borderline::{borderline_analysis, BorderlineAnalysis};
pub use calibration::{calibration_curve, CalibrationBin};
pub use fisher::fisher_exact;
pub use metrics::{cohens_kappa, confusion, roc_auc, roc_curve, sensitivity_specificity, ConfusionMatrix};
pub use report::{headline_metrics, SlideOutcome};
