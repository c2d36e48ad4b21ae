//! Dense `f64` kernel: tensors, a reverse-mode tape, LSTM recurrence,
//! dropout and RMSProp.

mod lstm;
mod ops;
mod params;
mod rmsprop;
mod tape;
mod tensor;

pub use lstm::{lstm_step, run_lstm, LstmIds, LstmParams};
pub use ops::{apply_dropout, argmax, dropout_mask, softmax};
pub use params::{glorot_uniform, Gradients, ParamId, ParamStore};
pub use rmsprop::{rmsprop_update, RmsProp, RmsPropState};
pub use tape::{sigmoid, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use ops::check_rate;
