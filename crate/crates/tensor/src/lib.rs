//! Dense 4-D tensors, a dynamic reverse-mode tape over the operation set used
//! by the segmentation model, a finite-difference gradient checker and the
//! WSFT tensor file format.
//!
//! ```
//! use wsfcn_tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! store.insert("w", Tensor::scalar(3.0), 1.0).unwrap();
//! let mut tape = Tape::new();
//! let w = tape.param(&store, "w").unwrap();
//! let sq = tape.broadcast_mul(w, w).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.grad("w").unwrap().data(), &[6.0]);
//! ```

pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod wsft;

pub use error::{Result, TensorError};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, FdOptions, FdReport};
pub use ops::{BnStats, Conv2dSpec, GateKind, PoolMode};
pub use params::{Param, ParamStore};
pub use tape::{backward, Gradients, Tape, Var};
pub use tensor::{DType, Shape, Tensor};
