//! Dense tensors and a reverse-mode autograd that supports gradients of
//! gradients, sized for small convolutional GANs on a CPU.
//!
//! ```
//! use footprint_tensor::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.variable(Tensor::new(&[2], vec![3.0, 4.0]));
//! let sq = g.square(x);
//! let norm = g.sqrt(g.sum(sq));
//! let dx = g.grad(norm, &[x], false)[0].unwrap();
//! let d = g.value(dx);
//! assert!((d.data()[0] - 0.6).abs() < 1e-12 && (d.data()[1] - 0.8).abs() < 1e-12);
//! ```

mod conv;
mod element;
mod graph;
mod tensor;

pub use conv::{conv2d, conv2d_transpose, conv2d_weight, ConvGeom};
pub use element::Element;
pub use graph::{Graph, Var};
pub use tensor::{numel, Tensor};
