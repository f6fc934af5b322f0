//! Reverse-mode differentiation over tensor-valued operations.
//!
//! A [`Tape`] records every operation in application order. Each recorded
//! value only ever refers to values recorded before it, so walking the tape
//! from the end visits every consumer of a value before the value itself.

use super::tensor::{dist, norm, Tensor};
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    NormalizeRows { x: Var, eps: f64, norms: Vec<f64> },
    SelectRows { x: Var, rows: Vec<usize> },
    PairDistances { x: Var, pairs: Vec<(usize, usize)> },
    CrossDistances(Var, Var),
    Contrastive { d: Var, targets: Vec<bool>, margin: f64 },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: bool,
}

/// Records operations for one forward pass. Confined to a single thread and
/// a single training step.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero if `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tracked leaf (a parameter we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true, true)
    }

    /// Records an untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_node(&mut self, value: Tensor, op: Op, needs_grad: bool, param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, op, needs_grad, false)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumError {
        NumError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = super::tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let value = super::tensor::transpose(self.value(a))?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    /// `x[B×n] + bias[n]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let (_, n) = self.value(x).require_matrix("add_bias")?;
        if self.shape(bias) != [n] {
            return Err(self.mismatch("add_bias", x, bias));
        }
        let b = self.value(bias).data().to_vec();
        let xv = self.value(x);
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(&b).for_each(|(r, bv)| *r += bv);
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|v| v * c).collect();
        let value = Tensor::new(av.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = super::tensor::relu(self.value(a));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Row-wise `x / max(‖x‖₂, eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let c = xv.cols();
        let norms: Vec<f64> = if c == 0 {
            Vec::new()
        } else {
            xv.data().chunks(c).map(norm).collect()
        };
        let value = super::tensor::l2_normalize(xv, eps);
        self.push(value, Op::NormalizeRows { x, eps, norms }, &[x])
    }

    /// Gathers rows of a matrix (repeats allowed).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, NumError> {
        let (n, c) = self.value(x).require_matrix("select_rows")?;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(NumError::IndexOutOfRange {
                    op: "select_rows",
                    index: r,
                    len: n,
                });
            }
            data.extend_from_slice(xv.row(r));
        }
        let value = Tensor::matrix(rows.len(), c, data)?;
        Ok(self.push(
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        ))
    }

    /// `‖x_a − x_b‖₂` for every listed row pair; returns a vector.
    pub fn pair_distances(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var, NumError> {
        let (n, _) = self.value(x).require_matrix("pair_distances")?;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            let bad = if a >= n { Some(a) } else if b >= n { Some(b) } else { None };
            if let Some(index) = bad {
                return Err(NumError::IndexOutOfRange {
                    op: "pair_distances",
                    index,
                    len: n,
                });
            }
            data.push(dist(xv.row(a), xv.row(b)));
        }
        let value = Tensor::vector(data);
        Ok(self.push(
            value,
            Op::PairDistances {
                x,
                pairs: pairs.to_vec(),
            },
            &[x],
        ))
    }

    /// `D[i][k] = ‖x_i − y_k‖₂` for `x[B×d]`, `y[C×d]`.
    pub fn cross_distances(&mut self, x: Var, y: Var) -> Result<Var, NumError> {
        let (b, d) = self.value(x).require_matrix("cross_distances")?;
        let (c, d2) = self.value(y).require_matrix("cross_distances")?;
        if d != d2 {
            return Err(self.mismatch("cross_distances", x, y));
        }
        let (xv, yv) = (self.value(x), self.value(y));
        let mut data = Vec::with_capacity(b * c);
        for i in 0..b {
            for k in 0..c {
                data.push(dist(xv.row(i), yv.row(k)));
            }
        }
        let value = Tensor::matrix(b, c, data)?;
        Ok(self.push(value, Op::CrossDistances(x, y), &[x, y]))
    }

    /// Elementwise contrastive term on a distance vector:
    /// `d` for positives, `max(0, margin − d)` for negatives.
    pub fn contrastive(&mut self, d: Var, targets: &[bool], margin: f64) -> Result<Var, NumError> {
        let dv = self.value(d);
        if dv.len() != targets.len() {
            return Err(NumError::ShapeMismatch {
                op: "contrastive",
                left: dv.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let data = dv
            .data()
            .iter()
            .zip(targets)
            .map(|(&dist, &t)| if t { dist } else { (margin - dist).max(0.0) })
            .collect();
        let value = Tensor::new(dv.shape().to_vec(), data)?;
        Ok(self.push(
            value,
            Op::Contrastive {
                d,
                targets: targets.to_vec(),
                margin,
            },
            &[d],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(NumError::Empty { op: "mean" });
        }
        let m = av.data().iter().sum::<f64>() / av.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), &[a]))
    }

    /// Back-propagates from the scalar `output` through every recorded op.
    pub fn backward(&self, output: Var) -> Result<Gradients, NumError> {
        let out = self.value(output);
        out.as_scalar()?;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::new(out.shape().to_vec(), vec![1.0])?);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        // Only tracked parameters keep their gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.param {
                *slot = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumError> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).require_matrix("matmul")?;
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let bv = self.value(*b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    accumulate(grads, *a, self.value(*a).shape(), &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let av = self.value(*a).data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aval = av[i * k + p];
                            if aval == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            drow.iter_mut().zip(grow).for_each(|(d, gv)| *d += aval * gv);
                        }
                    }
                    accumulate(grads, *b, self.value(*b).shape(), &db);
                }
            }
            Op::Transpose(a) => {
                let gt = super::tensor::transpose(g)?;
                accumulate(grads, *a, self.value(*a).shape(), gt.data());
            }
            Op::AddBias(x, bias) => {
                if self.needs(*x) {
                    accumulate(grads, *x, self.value(*x).shape(), gd);
                }
                if self.needs(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, gv)| *d += gv);
                    }
                    accumulate(grads, *bias, &[n], &db);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd);
                accumulate(grads, *b, g.shape(), gd);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), gd);
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                accumulate(grads, *b, g.shape(), &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<f64> = gd.iter().zip(bv).map(|(gv, y)| gv * y).collect();
                let db: Vec<f64> = gd.iter().zip(av).map(|(gv, x)| gv * x).collect();
                accumulate(grads, *a, g.shape(), &da);
                accumulate(grads, *b, g.shape(), &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = gd.iter().map(|v| v * c).collect();
                accumulate(grads, *a, g.shape(), &da);
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let da: Vec<f64> = gd
                    .iter()
                    .zip(av)
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g.shape(), &da);
            }
            Op::NormalizeRows { x, eps, norms } => {
                let y = &node.value;
                let c = y.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let span = r * c..(r + 1) * c;
                    let (yr, gr, dr) = (&y.data()[span.clone()], &gd[span.clone()], &mut dx[span]);
                    if n >= *eps {
                        // (I − y yᵀ) g / ‖x‖
                        let yg: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            dr[j] = (gr[j] - yr[j] * yg) / n;
                        }
                    } else {
                        for j in 0..c {
                            dr[j] = gr[j] / eps;
                        }
                    }
                }
                accumulate(grads, *x, y.shape(), &dx);
            }
            Op::SelectRows { x, rows } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                for (out_r, &src) in rows.iter().enumerate() {
                    let grow = &gd[out_r * c..(out_r + 1) * c];
                    dx[src * c..(src + 1) * c]
                        .iter_mut()
                        .zip(grow)
                        .for_each(|(d, gv)| *d += gv);
                }
                accumulate(grads, *x, xv.shape(), &dx);
            }
            Op::PairDistances { x, pairs } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let dists = node.value.data();
                let mut dx = vec![0.0; xv.len()];
                for (p, &(a, b)) in pairs.iter().enumerate() {
                    let d = dists[p];
                    if d == 0.0 || gd[p] == 0.0 {
                        continue;
                    }
                    let w = gd[p] / d;
                    for j in 0..c {
                        let diff = xv.data()[a * c + j] - xv.data()[b * c + j];
                        dx[a * c + j] += w * diff;
                        dx[b * c + j] -= w * diff;
                    }
                }
                accumulate(grads, *x, xv.shape(), &dx);
            }
            Op::CrossDistances(x, y) => {
                let (xv, yv) = (self.value(*x), self.value(*y));
                let (bsz, d) = (xv.rows(), xv.cols());
                let csz = yv.rows();
                let dists = node.value.data();
                let mut dx = vec![0.0; xv.len()];
                let mut dy = vec![0.0; yv.len()];
                for i in 0..bsz {
                    for k in 0..csz {
                        let idx = i * csz + k;
                        let dd = dists[idx];
                        if dd == 0.0 || gd[idx] == 0.0 {
                            continue;
                        }
                        let w = gd[idx] / dd;
                        for j in 0..d {
                            let diff = xv.data()[i * d + j] - yv.data()[k * d + j];
                            dx[i * d + j] += w * diff;
                            dy[k * d + j] -= w * diff;
                        }
                    }
                }
                if self.needs(*x) {
                    accumulate(grads, *x, xv.shape(), &dx);
                }
                if self.needs(*y) {
                    accumulate(grads, *y, yv.shape(), &dy);
                }
            }
            Op::Contrastive { d, targets, margin } => {
                let dv = self.value(*d).data();
                let dd: Vec<f64> = gd
                    .iter()
                    .zip(dv)
                    .zip(targets)
                    .map(|((gv, &dist), &t)| {
                        if t {
                            *gv
                        } else if margin - dist > 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *d, g.shape(), &dd);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                let da = vec![gd[0]; av.len()];
                accumulate(grads, *a, av.shape(), &da);
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let da = vec![gd[0] / av.len() as f64; av.len()];
                accumulate(grads, *a, av.shape(), &da);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], delta: &[f64]) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(delta)
            .for_each(|(e, d)| *e += d),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}
