//! Reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! Everything the model computes is recorded on a [`Graph`] tape whose
//! values are `ndarray` matrices. The op set is small and tailored to the
//! graph-to-sequence model: dense algebra, a constant sparse product for
//! neighborhood averaging, and segment-wise reductions for batching graphs
//! of different sizes side by side.
//!
//! All code is generic over [`Scalar`], so training runs at `f32` while the
//! gradient-check harness drives the same code at `f64`.

mod csr;
mod graph;
mod optim;
mod params;

pub use csr::Csr;
pub use graph::{Gradients, Graph, Segments, Var, LOG_FLOOR};
pub use optim::{Adam, AdamState};
pub use params::{ParamId, ParamStore};



/// Floating-point element type of the tape.
pub trait Scalar:
    ndarray::NdFloat + Default + std::iter::Sum + for<'a> std::iter::Sum<&'a Self>
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[cfg(test)]
mod tests;
