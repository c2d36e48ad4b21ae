//! Character-level neural morphological tagging with cross-lingual transfer.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod numkernel;
pub mod persist;
pub mod synthetic;
pub mod tagset;
pub mod train;

pub use corpus::{Alphabet, Corpus, Sentence, Split};
pub use error::{Error, Result};
pub use eval::EvalResult;
pub use model::{Architecture, Dims, TaggerModel};
pub use tagset::{MorphTag, TagInventory};
pub use train::{TrainConfig, TrainData, TrainReport};
