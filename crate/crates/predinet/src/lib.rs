//! PrediNet lab: an attention-based relational module, the Relations Game
//! image tasks it is trained on, four baseline architectures, a curriculum
//! training protocol, interpretability analyses, and export of the learned
//! relations as Prolog facts.

pub mod game;
pub mod harness;
pub mod nets;
pub mod analysis;
pub mod protocol;
pub mod symbolic;
pub mod tensor;
