//! Recording tape with forward-over-reverse second-order support.
//!
//! A [`Tape`] is built against a flat parameter vector `w` and, optionally, a
//! direction `v` of the same length. Every node stores its primal value and,
//! when a direction is present, its forward tangent (the directional
//! derivative along `v`). [`Tape::backward`] then propagates adjoints together
//! with their tangents, so one sweep yields both `∇L(w)` and `H(w)·v`.
//!
//! All values are 2-D `f64` matrices; scalars are `1×1`.

use ndarray::{Array2, Axis, Zip};

use crate::{Error, FlatVector, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    /// `x + 1·bᵀ` with `b` a `1×m` row added to every row of `x`.
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    /// Mean softmax cross-entropy; caches the row-wise softmax.
    SoftmaxXent {
        logits: Var,
        labels: Vec<usize>,
        probs: Array2<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array2<f64>,
    tangent: Option<Array2<f64>>,
    requires_grad: bool,
}

/// Output of a backward sweep.
#[derive(Debug, Clone)]
pub struct Derivatives {
    pub gradient: FlatVector,
    /// `H·v`, present when the tape was built with a direction.
    pub hvp: Option<FlatVector>,
}

pub struct Tape<'a> {
    params: &'a [f64],
    direction: Option<&'a [f64]>,
    nodes: Vec<Node>,
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn add_opt(a: Option<Array2<f64>>, b: Option<Array2<f64>>) -> Option<Array2<f64>> {
    match (a, b) {
        (Some(mut x), Some(y)) => {
            x += &y;
            Some(x)
        }
        (x, None) => x,
        (None, y) => y,
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, contrib: Option<Array2<f64>>) {
    if let Some(c) = contrib {
        match slot {
            Some(s) => *s += &c,
            None => *slot = Some(c),
        }
    }
}

impl<'a> Tape<'a> {
    /// Tape for value and gradient only.
    pub fn new(params: &'a [f64]) -> Self {
        Self {
            params,
            direction: None,
            nodes: Vec::with_capacity(32),
        }
    }

    /// Tape that also carries tangents along `direction`, enabling `H·v`.
    pub fn with_direction(params: &'a [f64], direction: &'a [f64]) -> Result<Self> {
        if params.len() != direction.len() {
            return Err(Error::Config(format!(
                "direction length {} does not match parameter count {}",
                direction.len(),
                params.len()
            )));
        }
        Ok(Self {
            params,
            direction: Some(direction),
            nodes: Vec::with_capacity(32),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, tangent: Option<Array2<f64>>, rg: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            tangent: if self.direction.is_some() { tangent } else { None },
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.node(v).value
    }

    /// Forward tangent of `v` along the tape direction, if any.
    pub fn tangent(&self, v: Var) -> Option<&Array2<f64>> {
        self.node(v).tangent.as_ref()
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Fails with a numerical-overflow error naming `location` when the value
    /// of `v` holds a NaN or infinity.
    pub fn check_finite(&self, v: Var, location: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::overflow(location))
        }
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Constant, value, None, false)
    }

    /// A `rows×cols` block of the parameter vector starting at `offset`,
    /// read in row-major order.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let end = offset + rows * cols;
        if end > self.params.len() {
            return Err(Error::Config(format!(
                "parameter block {offset}..{end} exceeds parameter count {}",
                self.params.len()
            )));
        }
        let block = |src: &[f64]| {
            Array2::from_shape_vec((rows, cols), src[offset..end].to_vec())
                .expect("block length matches shape")
        };
        let value = block(self.params);
        let tangent = self.direction.map(block);
        Ok(self.push(Op::Param { offset }, value, tangent, true))
    }

    fn binary_rg(&self, a: Var, b: Var) -> bool {
        self.node(a).requires_grad || self.node(b).requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        let ((m, k), (k2, n)) = (shape(&an.value), shape(&bn.value));
        if k != k2 {
            return Err(Error::Config(format!("matmul shape mismatch: {m}x{k} · {k2}x{n}")));
        }
        let value = an.value.dot(&bn.value);
        let tangent = add_opt(
            an.tangent.as_ref().map(|ta| ta.dot(&bn.value)),
            bn.tangent.as_ref().map(|tb| an.value.dot(tb)),
        );
        let rg = self.binary_rg(a, b);
        Ok(self.push(Op::MatMul(a, b), value, tangent, rg))
    }

    /// `a · bᵀ`; with `b` stored as `out×in`, this is a dense layer.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        let ((m, k), (n, k2)) = (shape(&an.value), shape(&bn.value));
        if k != k2 {
            return Err(Error::Config(format!(
                "matmul shape mismatch: {m}x{k} · ({n}x{k2})ᵀ"
            )));
        }
        let value = an.value.dot(&bn.value.t());
        let tangent = add_opt(
            an.tangent.as_ref().map(|ta| ta.dot(&bn.value.t())),
            bn.tangent.as_ref().map(|tb| an.value.dot(&tb.t())),
        );
        let rg = self.binary_rg(a, b);
        Ok(self.push(Op::MatMulNT(a, b), value, tangent, rg))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xn, bn) = (self.node(x), self.node(bias));
        let ((_, m), (r, m2)) = (shape(&xn.value), shape(&bn.value));
        if r != 1 || m != m2 {
            return Err(Error::Config(format!(
                "bias shape {r}x{m2} does not broadcast over {m} columns"
            )));
        }
        let value = &xn.value + &bn.value;
        let tangent = match (&xn.tangent, &bn.tangent) {
            (Some(tx), Some(tb)) => Some(tx + tb),
            (Some(tx), None) => Some(tx.clone()),
            (None, Some(tb)) => Some(tb.broadcast(xn.value.dim()).expect("checked").to_owned()),
            (None, None) => None,
        };
        let rg = self.binary_rg(x, bias);
        Ok(self.push(Op::AddBias(x, bias), value, tangent, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (shape(self.value(a)), shape(self.value(b)));
        if sa != sb {
            return Err(Error::Config(format!("{what} shape mismatch: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (an, bn) = (self.node(a), self.node(b));
        let value = &an.value + &bn.value;
        let tangent = add_opt(an.tangent.clone(), bn.tangent.clone());
        let rg = self.binary_rg(a, b);
        Ok(self.push(Op::Add(a, b), value, tangent, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (an, bn) = (self.node(a), self.node(b));
        let value = &an.value * &bn.value;
        let tangent = add_opt(
            an.tangent.as_ref().map(|ta| ta * &bn.value),
            bn.tangent.as_ref().map(|tb| &an.value * tb),
        );
        let rg = self.binary_rg(a, b);
        Ok(self.push(Op::Mul(a, b), value, tangent, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let an = self.node(a);
        let value = &an.value * c;
        let tangent = an.tangent.as_ref().map(|t| t * c);
        let rg = an.requires_grad;
        self.push(Op::Scale(a, c), value, tangent, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let an = self.node(a);
        let value = an.value.mapv(|x| if x > 0.0 { x } else { 0.0 });
        let tangent = an.tangent.as_ref().map(|t| {
            let mut t = t.clone();
            Zip::from(&mut t)
                .and(&an.value)
                .for_each(|ti, &x| if x <= 0.0 { *ti = 0.0 });
            t
        });
        let rg = an.requires_grad;
        self.push(Op::Relu(a), value, tangent, rg)
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let an = self.node(a);
        let value = Array2::from_elem((1, 1), an.value.sum());
        let tangent = an.tangent.as_ref().map(|t| Array2::from_elem((1, 1), t.sum()));
        let rg = an.requires_grad;
        self.push(Op::Sum(a), value, tangent, rg)
    }

    /// Mean softmax cross-entropy of `logits` (rows = examples) against
    /// integer `labels`, computed in max-shifted log-sum-exp form.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let zn = self.node(logits);
        let (n, k) = shape(&zn.value);
        if n == 0 {
            return Err(Error::Usage("cross-entropy over an empty batch".into()));
        }
        if labels.len() != n {
            return Err(Error::Config(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = Array2::zeros((n, k));
        let mut total = 0.0;
        for (i, (row, mut prow)) in zn
            .value
            .axis_iter(Axis(0))
            .zip(probs.axis_iter_mut(Axis(0)))
            .enumerate()
        {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            total += lse - row[labels[i]];
            Zip::from(&mut prow).and(&row).for_each(|p, &z| *p = (z - lse).exp());
        }
        let inv_n = 1.0 / n as f64;
        let value = Array2::from_elem((1, 1), total * inv_n);
        let tangent = zn.tangent.as_ref().map(|tz| {
            let mut acc = 0.0;
            for (i, (trow, prow)) in tz.axis_iter(Axis(0)).zip(probs.axis_iter(Axis(0))).enumerate() {
                let expected: f64 = trow.iter().zip(prow.iter()).map(|(t, p)| t * p).sum();
                acc += expected - trow[labels[i]];
            }
            Array2::from_elem((1, 1), acc * inv_n)
        });
        let rg = zn.requires_grad;
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
            tangent,
            rg,
        ))
    }

    /// Reverse sweep from the scalar node `output`.
    ///
    /// Returns the gradient with respect to the full parameter vector and,
    /// for tapes built with a direction `v`, the Hessian-vector product `H·v`.
    pub fn backward(&self, output: Var) -> Result<Derivatives> {
        if shape(self.value(output)) != (1, 1) {
            return Err(Error::Config("backward requires a scalar (1x1) output".into()));
        }
        let second = self.direction.is_some();
        let n = output.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        let mut adj_t: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        adj[output.0] = Some(Array2::from_elem((1, 1), 1.0));

        let mut gradient = vec![0.0; self.params.len()];
        let mut hvp = second.then(|| vec![0.0; self.params.len()]);

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let gt = adj_t[i].take();
            let node = &self.nodes[i];
            let wants = |v: Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param { offset } => {
                    let dst = &mut gradient[*offset..*offset + g.len()];
                    for (d, s) in dst.iter_mut().zip(g.iter()) {
                        *d += s;
                    }
                    if let (Some(h), Some(t)) = (hvp.as_mut(), gt.as_ref()) {
                        let dst = &mut h[*offset..*offset + t.len()];
                        for (d, s) in dst.iter_mut().zip(t.iter()) {
                            *d += s;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (an, bn) = (self.node(*a), self.node(*b));
                    if wants(*a) {
                        accumulate(&mut adj[a.0], Some(g.dot(&bn.value.t())));
                        if second {
                            let t = add_opt(
                                gt.as_ref().map(|t| t.dot(&bn.value.t())),
                                bn.tangent.as_ref().map(|tb| g.dot(&tb.t())),
                            );
                            accumulate(&mut adj_t[a.0], t);
                        }
                    }
                    if wants(*b) {
                        accumulate(&mut adj[b.0], Some(an.value.t().dot(&g)));
                        if second {
                            let t = add_opt(
                                an.tangent.as_ref().map(|ta| ta.t().dot(&g)),
                                gt.as_ref().map(|t| an.value.t().dot(t)),
                            );
                            accumulate(&mut adj_t[b.0], t);
                        }
                    }
                }
                Op::MatMulNT(a, b) => {
                    let (an, bn) = (self.node(*a), self.node(*b));
                    if wants(*a) {
                        accumulate(&mut adj[a.0], Some(g.dot(&bn.value)));
                        if second {
                            let t = add_opt(
                                gt.as_ref().map(|t| t.dot(&bn.value)),
                                bn.tangent.as_ref().map(|tb| g.dot(tb)),
                            );
                            accumulate(&mut adj_t[a.0], t);
                        }
                    }
                    if wants(*b) {
                        accumulate(&mut adj[b.0], Some(g.t().dot(&an.value)));
                        if second {
                            let t = add_opt(
                                gt.as_ref().map(|t| t.t().dot(&an.value)),
                                an.tangent.as_ref().map(|ta| g.t().dot(ta)),
                            );
                            accumulate(&mut adj_t[b.0], t);
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    if wants(*b) {
                        accumulate(&mut adj[b.0], Some(g.sum_axis(Axis(0)).insert_axis(Axis(0))));
                        if second {
                            let t = gt.as_ref().map(|t| t.sum_axis(Axis(0)).insert_axis(Axis(0)));
                            accumulate(&mut adj_t[b.0], t);
                        }
                    }
                    if wants(*x) {
                        accumulate(&mut adj[x.0], Some(g));
                        accumulate(&mut adj_t[x.0], gt);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut adj[a.0], Some(g.clone()));
                        accumulate(&mut adj_t[a.0], gt.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut adj[b.0], Some(g));
                        accumulate(&mut adj_t[b.0], gt);
                    }
                }
                Op::Mul(a, b) => {
                    let (an, bn) = (self.node(*a), self.node(*b));
                    if wants(*a) {
                        accumulate(&mut adj[a.0], Some(&g * &bn.value));
                        if second {
                            let t = add_opt(
                                gt.as_ref().map(|t| t * &bn.value),
                                bn.tangent.as_ref().map(|tb| &g * tb),
                            );
                            accumulate(&mut adj_t[a.0], t);
                        }
                    }
                    if wants(*b) {
                        accumulate(&mut adj[b.0], Some(&g * &an.value));
                        if second {
                            let t = add_opt(
                                gt.as_ref().map(|t| t * &an.value),
                                an.tangent.as_ref().map(|ta| &g * ta),
                            );
                            accumulate(&mut adj_t[b.0], t);
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if wants(*a) {
                        accumulate(&mut adj[a.0], Some(g * *c));
                        accumulate(&mut adj_t[a.0], gt.map(|t| t * *c));
                    }
                }
                Op::Relu(a) => {
                    if wants(*a) {
                        let x = &self.node(*a).value;
                        let mask = |mut m: Array2<f64>| {
                            Zip::from(&mut m).and(x).for_each(|mi, &xi| {
                                if xi <= 0.0 {
                                    *mi = 0.0
                                }
                            });
                            m
                        };
                        accumulate(&mut adj[a.0], Some(mask(g)));
                        accumulate(&mut adj_t[a.0], gt.map(mask));
                    }
                }
                Op::Sum(a) => {
                    if wants(*a) {
                        let dim = self.node(*a).value.dim();
                        accumulate(&mut adj[a.0], Some(Array2::from_elem(dim, g[[0, 0]])));
                        accumulate(&mut adj_t[a.0], gt.map(|t| Array2::from_elem(dim, t[[0, 0]])));
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    labels,
                    probs,
                } => {
                    if wants(*logits) {
                        let inv_n = 1.0 / labels.len() as f64;
                        // residual = P - onehot(Y)
                        let mut residual = probs.clone();
                        for (i, &y) in labels.iter().enumerate() {
                            residual[[i, y]] -= 1.0;
                        }
                        let upstream = g[[0, 0]] * inv_n;
                        if second {
                            let mut t = gt
                                .as_ref()
                                .map(|t| &residual * (t[[0, 0]] * inv_n));
                            if let Some(tz) = self.node(*logits).tangent.as_ref() {
                                // dP = P ⊙ (dZ - rowsum(P ⊙ dZ))
                                let mut dp = probs * tz;
                                let rowdot = dp.sum_axis(Axis(1));
                                Zip::from(dp.rows_mut())
                                    .and(probs.rows())
                                    .and(&rowdot)
                                    .for_each(|mut drow, prow, &s| {
                                        Zip::from(&mut drow).and(&prow).for_each(|d, &p| *d -= p * s);
                                    });
                                dp *= upstream;
                                t = add_opt(t, Some(dp));
                            }
                            accumulate(&mut adj_t[logits.0], t);
                        }
                        residual *= upstream;
                        accumulate(&mut adj[logits.0], Some(residual));
                    }
                }
            }
        }
        Ok(Derivatives { gradient, hvp })
    }
}
