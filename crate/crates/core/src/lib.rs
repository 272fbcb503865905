//! Formulaic alpha factor mining.
//!
//! Factors are small operator expressions over daily price/volume panels,
//! serialized as reverse-Polish token sequences. A recurrent token policy
//! proposes them, a linear pool combines them, and the policy is trained with
//! a REINFORCE estimator whose baseline is the reward of the policy's own
//! greedy decode.

pub mod backtest;
pub mod bandit;
pub mod error;
pub mod formula;
pub mod metrics;
pub mod panel;
pub mod policy;
pub mod pool;
pub mod trainer;

pub use error::{Error, Result};
pub use formula::{Feature, FactorMatrix, Grammar, Op, RpnProgram, Token, Vocabulary};
pub use panel::{PanelTensor, SplitSpec, TargetPanel};
