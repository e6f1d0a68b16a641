//! Small reverse-mode automatic differentiation over dense `f64` matrices,
//! plus the optimizer pieces training needs.
//!
//! Values are recorded on a [`Tape`] as they are computed. Calling
//! [`Var::backward`] on a scalar result walks the tape in reverse and
//! returns [`Gradients`] for every recorded value.
//!
//! ```
//! use manr::autodiff::{Array, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(Array::scalar(3.0));
//! let y = x.square();
//! let grads = y.backward().unwrap();
//! assert_eq!(y.item(), 9.0);
//! assert_eq!(grads.wrt(x).item(), 6.0);
//! ```

mod array;
pub mod check;
mod optim;
mod params;
mod tape;

pub use array::Array;
pub use optim::{adam_step, clip_gradients, AdamState, LrSchedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};
