//! Statistical pre-analysis: association tests, multiple-testing control,
//! anonymity gating and the exported insight summary.

pub mod anonymity;
pub mod binning;
pub mod inference;
pub mod summary;

pub use anonymity::{anonymity_check, AnonymityPolicy};
pub use binning::{bin_numeric, Bin, NumericRange};
pub use inference::{bh_fdr, chi_square_test, cramers_v, point_biserial, ChiSquare, Contingency2x2};
pub use summary::{
    build_insight_summary, schema_context, summarize_table, InsightSummary, SchemaEntry, SliceCondition,
    SliceInsight, SliceSpec, SliceStats, DEFAULT_N_BINS,
};
