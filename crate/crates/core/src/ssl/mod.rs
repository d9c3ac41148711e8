//! Selection and loss mathematics: temperature softmax, confidence masking,
//! temperature-scaled cross-entropy, FixMatch / DebiasPL objectives.

mod debias;
mod loss;
mod select;
mod softmax;

pub use debias::{debias_adjust, debias_update, DebiasState, DEBIAS_EPS};
pub use loss::{ce_loss_t, fixmatch_losses, retrieved_loss, CeLoss, FixMatchLosses};
pub use select::{select, SelectionResult};
pub use softmax::{argmax, argmax_rows, softmax_rows, softmax_t};
