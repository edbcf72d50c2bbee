//! Training laboratory for a modular recurrent architecture on the
//! pointer-based integer list-sorting task.
//!
//! The system is a perception-action loop: an environment state (a
//! padded one-hot digit list plus two pointer tracks) is transformed by
//! five operators — mova, movb, retb, swap and the identity EOP — each
//! a programmatic selective wrapper around a trainable LSTM kernel,
//! while a control module (digestor + controller) picks the operator at
//! every step. The crate contains everything needed to train the
//! modules independently, monolithically, or in a staged regime, and to
//! compare convergence, gradient magnitudes and generalization.
//!
//! Layout:
//! - [`tensor`], [`tape`]: dense f64 tensors and reverse-mode autodiff.
//! - [`rng`]: the seeded deterministic generator behind every draw.
//! - [`cells`]: LSTM cell/runner, bidirectional runner, dense layer.
//! - [`env`]: the exact environment, its operations, expert traces.
//! - [`data`]: curriculum/uniform sampling, noise, module datasets.
//! - [`operators`]: the pointer and swap kernels behind the operators.
//! - [`control`]: digestor, controller, and the perception-action loop.
//! - [`train`]: Adam, measures, metrics, and the three regimes.
//! - [`eval`]: teacher-free evaluation and generalization sweeps.
//! - [`params`]: the named-tensor parameter container format.

pub mod cells;
pub mod control;
pub mod data;
pub mod env;
pub mod eval;
pub mod operators;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use control::{run_agent, AgentParams, EpisodeResult};
pub use env::{decode_list, encode_list, generate_trace, is_final, symbolic_apply, EnvState, OpSymbol, Trace};
pub use eval::{evaluate_sorting, generalization_sweep, SweepReport};
pub use rng::Rng;
pub use tape::{finite_difference_check, NodeId, OpKind, Tape};
pub use tensor::Tensor;
pub use train::{train_modular, train_module, train_monolithic, train_staged, TrainConfig, TrainMode};
