//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Graph`] records every forward operation on a tape. Calling
//! [`Graph::backward`] on a scalar result walks the tape once in reverse and
//! accumulates gradients into the leaves created with [`Graph::param`].
//!
//! ```
//! use latentmap_autodiff::Graph;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(vec![1.0, -2.0], &[2]).unwrap();
//! let loss = g.l2_norm_squared(x);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
//! ```
//!
//! There is no implicit broadcasting. Elementwise binary ops need equal shapes;
//! [`Graph::add_bias`] is the only op that combines a `[C]` vector with an
//! `[N, C, ...]` array.

mod element;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;

pub use element::{Precision, Real};
pub use error::{AutodiffError, OpKind, Result};
pub use graph::{BatchMoments, Graph, NormMode, Tensor, Var};
