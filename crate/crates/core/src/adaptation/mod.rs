//! Target-side training: supervised CE on queried anchors, the anchor-vault
//! entropy term, prediction entropy, mixup and the per-round training loop.

mod losses;
mod mixup;
mod trainer;
mod vault;

pub use losses::{
    anchor_assignment, anchor_assignment_value, ce_loss, ce_loss_value, entropy_loss, entropy_loss_value, total_loss,
    vpa_loss, vpa_loss_value, LossWeights,
};
pub use mixup::{mixup_batch, mixup_with};
pub use trainer::{adapt_round, AdaptConfig, LossRecord, RoundData, RoundStats, VaultCadence};
pub use vault::PersistenceVault;
