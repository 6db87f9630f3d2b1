//! Dense row-major tensors with define-by-run reverse-mode differentiation.
//!
//! Values are immutable [`Tensor`]s. Differentiable computation happens on a
//! [`Graph`], which records each op together with its backward rule and
//! hands out [`Var`] handles:
//!
//! ```
//! use kanfpn_autodiff::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let w = g.leaf(Tensor::from_f64([2], &[0.5, -1.0]).unwrap());
//! let x = g.constant(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
//! let y = g.mul(w, x).unwrap();
//! let loss = g.sum(y).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

pub mod check;
mod element;
mod error;
mod graph;
pub mod ops;
mod tensor;

pub use element::{DType, Element};
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use ops::{Binary, Pool, Reduce, Unary, Window};
pub use tensor::Tensor;
