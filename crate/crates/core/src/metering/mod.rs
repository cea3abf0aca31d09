//! Per-role resource accounting and closed-form cost prediction.

mod compare;
mod ledger;
mod predict;

pub use compare::{
    check_comparable, comparison_table, reference_block, CompareError, ReferenceRow, RunSummary,
    REFERENCE, REFERENCE_CLIENTS,
};
pub use ledger::ResourceLedger;
pub use predict::{
    predict_federated, predict_largebatch, predict_split, reconcile, CostPrediction, CounterDiff,
    DiffReport,
};
