//! Neural building blocks shared by the generator and discriminator.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod loss;
pub mod lstm;
pub mod params;

pub use adam::{Adam, LrSchedule};
pub use checkpoint::Checkpoint;
pub use dense::{Activation, DenseLayer};
pub use loss::{bce_loss, categorical_ce_loss, PROB_CLAMP};
pub use lstm::LstmCell;
pub use params::{glorot_uniform, Bound, ParamId, ParamStore};
