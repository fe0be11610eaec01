//! Contrastive active sampling and the baseline query strategies.
//!
//! Everything here is a pure function of hypotheses or embeddings. Smaller
//! scores are more informative throughout; ties go to the lower sample id.

mod baselines;
mod cas;

pub use baselines::{
    baseline_select, kcenter_greedy, kmeans_representatives, shannon_entropy, uncertainty_scores, PoolView, Strategy,
};
pub use cas::{
    bvsb_margin, cas_scores, class_transferability, contrastive_log_probs, rank_scores, select_queries,
    select_smallest, CasConfig, HypothesisLog, Margin, SampleScore,
};
