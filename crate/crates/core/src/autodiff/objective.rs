use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::{Error, FlatVector, Result};

/// A scalar loss over a flat parameter vector with first- and second-order
/// derivative access.
///
/// Implementations must be pure: repeated calls with the same arguments
/// return bit-identical results.
pub trait Objective {
    /// Number of parameters.
    fn dim(&self) -> usize;

    fn loss(&self, params: &[f64]) -> Result<f64>;

    fn gradient(&self, params: &[f64]) -> Result<FlatVector>;

    /// Hessian-vector product `H(params)·v`.
    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector>;
}

impl<O: Objective + ?Sized> Objective for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn loss(&self, params: &[f64]) -> Result<f64> {
        (**self).loss(params)
    }
    fn gradient(&self, params: &[f64]) -> Result<FlatVector> {
        (**self).gradient(params)
    }
    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector> {
        (**self).hvp(params, v)
    }
}

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!(
            "{what} has length {got}, expected {want}"
        )));
    }
    Ok(())
}

fn finite_or(values: FlatVector, location: &str) -> Result<FlatVector> {
    if crate::vecops::all_finite(&values) {
        Ok(values)
    } else {
        Err(Error::overflow(location))
    }
}

/// An objective defined by a graph-building closure over a [`Tape`].
///
/// The closure records the loss computation and returns its scalar node; the
/// engine supplies values, gradients and Hessian-vector products.
pub struct GraphObjective<F> {
    dim: usize,
    build: F,
}

impl<F> GraphObjective<F>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    pub fn new(dim: usize, build: F) -> Self {
        Self { dim, build }
    }
}

impl<F> Objective for GraphObjective<F>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        check_len("parameter vector", params.len(), self.dim)?;
        let mut tape = Tape::new(params);
        let out = (self.build)(&mut tape)?;
        let l = tape.scalar(out);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::overflow("loss"))
        }
    }

    fn gradient(&self, params: &[f64]) -> Result<FlatVector> {
        check_len("parameter vector", params.len(), self.dim)?;
        let mut tape = Tape::new(params);
        let out = (self.build)(&mut tape)?;
        finite_or(tape.backward(out)?.gradient, "gradient")
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector> {
        check_len("parameter vector", params.len(), self.dim)?;
        check_len("hvp direction", v.len(), self.dim)?;
        let mut tape = Tape::with_direction(params, v)?;
        let out = (self.build)(&mut tape)?;
        let hv = tape.backward(out)?.hvp.expect("direction was supplied");
        finite_or(hv, "hessian-vector product")
    }
}

/// `½ wᵀ A w` for a square matrix `A`, evaluated through the tape.
///
/// For symmetric `A` the gradient is `A w` and the Hessian is `A`.
pub struct Quadratic {
    a: Array2<f64>,
}

impl Quadratic {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c || r == 0 {
            return Err(Error::Config(format!("quadratic form needs a square matrix, got {r}x{c}")));
        }
        Ok(Self { a })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Array2::from_diag(&ndarray::arr1(diag)))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    fn build(&self, tape: &mut Tape<'_>) -> Result<Var> {
        let d = self.a.nrows();
        let a = tape.constant(self.a.clone());
        let w = tape.param(0, d, 1)?;
        let aw = tape.matmul(a, w)?;
        let waw = tape.mul(w, aw)?;
        let s = tape.sum(waw);
        Ok(tape.scale(s, 0.5))
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        GraphObjective::new(self.dim(), |t: &mut Tape<'_>| self.build(t)).loss(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<FlatVector> {
        GraphObjective::new(self.dim(), |t: &mut Tape<'_>| self.build(t)).gradient(params)
    }

    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector> {
        GraphObjective::new(self.dim(), |t: &mut Tape<'_>| self.build(t)).hvp(params, v)
    }
}

/// Evaluation counts recorded by [`Counted`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalCounts {
    pub losses: u64,
    pub gradients: u64,
    pub hvps: u64,
}

/// Wraps an objective and counts every evaluation.
#[derive(Debug, Default)]
pub struct Counted<O> {
    inner: O,
    losses: AtomicU64,
    gradients: AtomicU64,
    hvps: AtomicU64,
}

impl<O> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            losses: AtomicU64::new(0),
            gradients: AtomicU64::new(0),
            hvps: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> EvalCounts {
        EvalCounts {
            losses: self.losses.load(Ordering::Relaxed),
            gradients: self.gradients.load(Ordering::Relaxed),
            hvps: self.hvps.load(Ordering::Relaxed),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Objective> Objective for Counted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.losses.fetch_add(1, Ordering::Relaxed);
        self.inner.loss(params)
    }
    fn gradient(&self, params: &[f64]) -> Result<FlatVector> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(params)
    }
    fn hvp(&self, params: &[f64], v: &[f64]) -> Result<FlatVector> {
        self.hvps.fetch_add(1, Ordering::Relaxed);
        self.inner.hvp(params, v)
    }
}
