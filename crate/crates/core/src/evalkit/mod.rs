//! Evaluation metrics: Spearman, fold change, precision@k, ROC/PR, ΔG, and
//! the per-assay report.

pub mod metrics;
pub mod report;

pub use metrics::{
    average_precision, average_ranks, delta_g_from_kd, fold_change, pr_curve, precision_at_k, roc_auc, roc_curve,
    spearman, top_k_order, PrCurve, PrecisionAtK, RankedRow, RankedTable, RocCurve, ThermoContext, GAS_CONSTANT_KCAL,
};
pub use report::{
    per_assay_report, ranked_tables, record_logliks, score_records, write_pr_csv, write_roc_csv, AssayReport, ModelScore, ReportRow,
    AGGREGATE_ID, REPORT_HEADER,
};
