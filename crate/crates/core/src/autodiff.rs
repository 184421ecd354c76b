//! Reverse-mode differentiation over the small operation set used by the
//! unfolded networks.
//!
//! A [`Tape`] records every primitive as it is evaluated. Values live on the
//! tape; a [`Var`] is just a handle. [`Tape::backward`] walks the nodes once in
//! reverse and returns gradients for the registered parameters.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => write!(f, "scalar"),
            Shape::Vector(n) => write!(f, "vector({n})"),
            Shape::Matrix(r, c) => write!(f, "matrix({r}x{c})"),
        }
    }
}

/// Identifies a trainable parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    Phi,
    Thresholds,
    Delta(usize),
    Tau(usize),
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Phi => write!(f, "phi"),
            ParamId::Thresholds => write!(f, "thresholds"),
            ParamId::Delta(i) => write!(f, "delta[{i}]"),
            ParamId::Tau(i) => write!(f, "tau[{i}]"),
        }
    }
}

/// Flat parameter values keyed by identifier.
pub type ParamValues = BTreeMap<ParamId, Vec<f64>>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    shape: Shape,
}

impl Var {
    pub fn shape(self) -> Shape {
        self.shape
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatVec(usize, usize),
    MatVecT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    ElemMul(usize, usize),
    Neg(usize),
    /// Scalar var times vector var.
    Scale(usize, usize),
    ScaleConst(f64, usize),
    AddConst(usize),
    Dot(usize, usize),
    Relu(usize),
    Abs(usize),
    TanhScaled(usize, f64),
    NormalizeL2(usize, f64),
    TopkMask(usize, Vec<bool>),
    ReduceSumSq(usize),
    Sum(usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    shape: Shape,
    op: Op,
    requires_grad: bool,
}

/// Gradients keyed by parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradSet(BTreeMap<ParamId, Vec<f64>>);

impl GradSet {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.0.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.0.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Element-wise sum. An empty set acts as the identity.
    pub fn merge(&mut self, other: &GradSet) -> Result<()> {
        if self.0.is_empty() {
            self.0 = other.0.clone();
            return Ok(());
        }
        if self.0.len() != other.0.len() {
            return Err(Error::contract("merging gradient sets with different keys"));
        }
        for (id, g) in &other.0 {
            let mine = self
                .0
                .get_mut(id)
                .ok_or_else(|| Error::contract(format!("gradient for {id} missing")))?;
            if mine.len() != g.len() {
                return Err(Error::contract(format!("gradient shape mismatch for {id}")));
            }
            mine.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.0.values_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn into_inner(self) -> BTreeMap<ParamId, Vec<f64>> {
        self.0
    }
}

impl From<BTreeMap<ParamId, Vec<f64>>> for GradSet {
    fn from(map: BTreeMap<ParamId, Vec<f64>>) -> Self {
        GradSet(map)
    }
}

/// An append-only record of primitive applications.
#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, usize)>,
    kink_margin: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn shape_error(op: &str, a: Shape, b: Shape) -> Error {
    Error::contract(format!("{op}: incompatible shapes {a} and {b}"))
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
            kink_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.idx].value
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.idx].value[0]
    }

    /// Smallest distance of any recorded relu/abs input from zero, or of any
    /// top-k selection from a tie. Finite differences are only trustworthy
    /// when perturbations stay well inside this margin.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    fn push(&mut self, value: Vec<f64>, shape: Shape, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var {
            idx: self.nodes.len() - 1,
            shape,
        }
    }

    fn grad_flag(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.idx].requires_grad)
    }

    pub fn constant(&mut self, shape: Shape, values: Vec<f64>) -> Result<Var> {
        if values.len() != shape.len() {
            return Err(Error::contract(format!(
                "constant of shape {shape} given {} values",
                values.len()
            )));
        }
        Ok(self.push(values, shape, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![v], Shape::Scalar, Op::Leaf, false)
    }

    pub fn vector(&mut self, values: &[f64]) -> Var {
        self.push(values.to_vec(), Shape::Vector(values.len()), Op::Leaf, false)
    }

    pub fn matrix(&mut self, m: &Matrix) -> Var {
        self.push(
            m.as_slice().to_vec(),
            Shape::Matrix(m.rows(), m.cols()),
            Op::Leaf,
            false,
        )
    }

    /// Registers a trainable leaf. Each identifier may be registered once;
    /// reuse the returned handle wherever the parameter appears.
    pub fn param(&mut self, id: ParamId, shape: Shape, values: &[f64]) -> Result<Var> {
        if self.params.iter().any(|(p, _)| *p == id) {
            return Err(Error::contract(format!("parameter {id} registered twice")));
        }
        if values.len() != shape.len() {
            return Err(Error::contract(format!(
                "parameter {id} of shape {shape} given {} values",
                values.len()
            )));
        }
        let v = self.push(values.to_vec(), shape, Op::Leaf, true);
        self.params.push((id, v.idx));
        Ok(v)
    }

    pub fn mat_vec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (rows, cols) = match (a.shape, x.shape) {
            (Shape::Matrix(r, c), Shape::Vector(n)) if c == n => (r, c),
            _ => return Err(shape_error("mat_vec", a.shape, x.shape)),
        };
        let mut out = vec![0.0; rows];
        numerics::matvec_raw(&self.nodes[a.idx].value, rows, cols, &self.nodes[x.idx].value, &mut out);
        let rg = self.grad_flag(&[a, x]);
        Ok(self.push(out, Shape::Vector(rows), Op::MatVec(a.idx, x.idx), rg))
    }

    pub fn mat_vec_t(&mut self, a: Var, y: Var) -> Result<Var> {
        let (rows, cols) = match (a.shape, y.shape) {
            (Shape::Matrix(r, c), Shape::Vector(m)) if r == m => (r, c),
            _ => return Err(shape_error("mat_vec_t", a.shape, y.shape)),
        };
        let mut out = vec![0.0; cols];
        numerics::matvec_t_raw(&self.nodes[a.idx].value, rows, cols, &self.nodes[y.idx].value, &mut out);
        let rg = self.grad_flag(&[a, y]);
        Ok(self.push(out, Shape::Vector(cols), Op::MatVecT(a.idx, y.idx), rg))
    }

    fn zip_with(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if a.shape != b.shape {
            return Err(shape_error(name, a.shape, b.shape));
        }
        let out = self.nodes[a.idx]
            .value
            .iter()
            .zip(&self.nodes[b.idx].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(out, a.shape, op, rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.nodes[a.idx].value.iter().map(|&x| f(x)).collect();
        let rg = self.grad_flag(&[a]);
        self.push(out, a.shape, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a.idx, b.idx))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a.idx, b.idx))
    }

    pub fn elem_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("elem_mul", a, b, |x, y| x * y, Op::ElemMul(a.idx, b.idx))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.map(a, |x| -x, Op::Neg(a.idx))
    }

    /// Scalar `s` times `v`.
    pub fn scale(&mut self, s: Var, v: Var) -> Result<Var> {
        if s.shape != Shape::Scalar {
            return Err(shape_error("scale", s.shape, v.shape));
        }
        let c = self.nodes[s.idx].value[0];
        let out = self.nodes[v.idx].value.iter().map(|&x| c * x).collect();
        let rg = self.grad_flag(&[s, v]);
        Ok(self.push(out, v.shape, Op::Scale(s.idx, v.idx), rg))
    }

    pub fn scale_const(&mut self, c: f64, v: Var) -> Var {
        self.map(v, |x| c * x, Op::ScaleConst(c, v.idx))
    }

    /// `c + v` element-wise.
    pub fn add_const(&mut self, c: f64, v: Var) -> Var {
        self.map(v, |x| c + x, Op::AddConst(v.idx))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if a.shape != b.shape {
            return Err(shape_error("dot", a.shape, b.shape));
        }
        let out = numerics::dot(&self.nodes[a.idx].value, &self.nodes[b.idx].value);
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push(vec![out], Shape::Scalar, Op::Dot(a.idx, b.idx), rg))
    }

    fn note_kinks(&mut self, a: Var) {
        let m = self.nodes[a.idx]
            .value
            .iter()
            .fold(f64::INFINITY, |m, x| m.min(x.abs()));
        self.kink_margin = self.kink_margin.min(m);
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.map(a, |x| x.max(0.0), Op::Relu(a.idx))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        self.map(a, f64::abs, Op::Abs(a.idx))
    }

    /// `tanh(t·a)`.
    pub fn tanh_scaled(&mut self, a: Var, t: f64) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::contract(format!("smoothness must be positive, got {t}")));
        }
        Ok(self.map(a, |x| (t * x).tanh(), Op::TanhScaled(a.idx, t)))
    }

    /// `a / ‖a‖₂`. A zero input is reported as a degenerate iterate.
    pub fn normalize_l2(&mut self, a: Var) -> Result<Var> {
        let norm = numerics::norm2(&self.nodes[a.idx].value);
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateIterate {
                iteration: 0,
                trajectory: Vec::new(),
            });
        }
        Ok(self.map(a, |x| x / norm, Op::NormalizeL2(a.idx, norm)))
    }

    /// Keeps the `k` largest-magnitude entries (ties to the smaller index).
    /// The backward pass routes gradient through the kept support only.
    pub fn topk_mask(&mut self, a: Var, k: usize) -> Result<Var> {
        let n = a.shape.len();
        if k == 0 || k > n {
            return Err(Error::contract(format!("sparsity {k} must lie in 1..={n}")));
        }
        let x = &self.nodes[a.idx].value;
        let gap = numerics::top_k_gap(x, k);
        let mut mask = vec![false; n];
        for i in numerics::top_k_indices(x, k) {
            mask[i] = true;
        }
        self.kink_margin = self.kink_margin.min(gap);
        let out = x
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        let rg = self.grad_flag(&[a]);
        Ok(self.push(out, a.shape, Op::TopkMask(a.idx, mask), rg))
    }

    pub fn reduce_sum_sq(&mut self, a: Var) -> Var {
        let s = numerics::dot(&self.nodes[a.idx].value, &self.nodes[a.idx].value);
        let rg = self.grad_flag(&[a]);
        self.push(vec![s], Shape::Scalar, Op::ReduceSumSq(a.idx), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.idx].value.iter().sum();
        let rg = self.grad_flag(&[a]);
        self.push(vec![s], Shape::Scalar, Op::Sum(a.idx), rg)
    }

    /// Reverse pass from a scalar `loss`; returns a gradient for every
    /// registered parameter (zeros where the loss does not depend on it).
    pub fn backward(&self, loss: Var) -> Result<GradSet> {
        if loss.shape != Shape::Scalar {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {}",
                loss.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.idx + 1];
        grads[loss.idx] = Some(vec![1.0]);

        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
        }

        let mut out = BTreeMap::new();
        for &(id, idx) in &self.params {
            let g = grads
                .get_mut(idx)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; self.nodes[idx].shape.len()]);
            out.insert(id, g);
        }
        Ok(GradSet(out))
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| self.nodes[i].value.as_slice();
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[i].requires_grad {
                return;
            }
            let slot = grads[i].get_or_insert_with(|| vec![0.0; self.nodes[i].shape.len()]);
            f(slot);
        };
        match node.op {
            Op::Leaf => {}
            Op::MatVec(a, x) => {
                let (rows, cols) = match self.nodes[a].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!("checked at record time"),
                };
                let (av, xv) = (val(a), val(x));
                acc(a, &mut |ga| {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * cols + j] += g[i] * xv[j];
                        }
                    }
                });
                acc(x, &mut |gx| {
                    let mut t = vec![0.0; cols];
                    numerics::matvec_t_raw(av, rows, cols, g, &mut t);
                    gx.iter_mut().zip(&t).for_each(|(o, v)| *o += v);
                });
            }
            Op::MatVecT(a, y) => {
                let (rows, cols) = match self.nodes[a].shape {
                    Shape::Matrix(r, c) => (r, c),
                    _ => unreachable!("checked at record time"),
                };
                let (av, yv) = (val(a), val(y));
                acc(a, &mut |ga| {
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * cols + j] += yv[i] * g[j];
                        }
                    }
                });
                acc(y, &mut |gy| {
                    let mut t = vec![0.0; rows];
                    numerics::matvec_raw(av, rows, cols, g, &mut t);
                    gy.iter_mut().zip(&t).for_each(|(o, v)| *o += v);
                });
            }
            Op::Add(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o += v));
            }
            Op::Sub(a, b) => {
                acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o += v));
                acc(b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, v)| *o -= v));
            }
            Op::ElemMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                });
                acc(b, &mut |gb| {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                });
            }
            Op::Neg(a) => acc(a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, v)| *o -= v)),
            Op::Scale(s, v) => {
                let (sv, vv) = (val(s)[0], val(v));
                acc(s, &mut |gs| gs[0] += numerics::dot(g, vv));
                acc(v, &mut |gv| gv.iter_mut().zip(g).for_each(|(o, gi)| *o += sv * gi));
            }
            Op::ScaleConst(c, v) => acc(v, &mut |gv| gv.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi)),
            Op::AddConst(v) => acc(v, &mut |gv| gv.iter_mut().zip(g).for_each(|(o, gi)| *o += gi)),
            Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |ga| ga.iter_mut().zip(bv).for_each(|(o, bi)| *o += g[0] * bi));
                acc(b, &mut |gb| gb.iter_mut().zip(av).for_each(|(o, ai)| *o += g[0] * ai));
            }
            Op::Relu(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(av) {
                        if *x > 0.0 {
                            *o += gi;
                        } else if *x < 0.0 {
                            *o -= gi;
                        }
                    }
                });
            }
            Op::TanhScaled(a, t) => {
                let y = &node.value;
                acc(a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * t * (1.0 - yi * yi);
                    }
                });
            }
            Op::NormalizeL2(a, norm) => {
                let y = &node.value;
                let proj = numerics::dot(y, g);
                acc(a, &mut |ga| {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += (gi - yi * proj) / norm;
                    }
                });
            }
            Op::TopkMask(a, ref mask) => {
                acc(a, &mut |ga| {
                    for ((o, gi), keep) in ga.iter_mut().zip(g).zip(mask) {
                        if *keep {
                            *o += gi;
                        }
                    }
                });
            }
            Op::ReduceSumSq(a) => {
                let av = val(a);
                acc(a, &mut |ga| {
                    ga.iter_mut().zip(av).for_each(|(o, x)| *o += 2.0 * g[0] * x)
                });
            }
            Op::Sum(a) => acc(a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
        }
    }
}

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over coordinates of [`relative_error`], with the denominator
    /// raised to [`resolution_floor`] so derivatives too small for the
    /// difference quotient to resolve are compared in absolute terms.
    pub max_rel_error: f64,
    pub worst: Option<(ParamId, usize)>,
    /// Analytic and finite-difference values at the worst coordinate.
    pub worst_values: (f64, f64),
    pub per_param: BTreeMap<ParamId, f64>,
    /// Kink margin of the unperturbed graph.
    pub kink_margin: f64,
    pub coordinates: usize,
}

/// Relative discrepancy `|a − d| / (|a| + |d| + 1e−12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Smallest derivative a central difference with step `h` resolves to about
/// five significant digits when the function values have magnitude `scale`.
/// Rounding in `f(p ± h)` alone contributes roughly `ε·scale/h`.
pub fn resolution_floor(scale: f64, h: f64) -> f64 {
    1e5 * f64::EPSILON * scale.max(1.0) / h
}

/// Checks every coordinate of every parameter in `params` against the central
/// difference `(f(p + h) − f(p − h)) / 2h`. `build` must register each
/// parameter on the tape and return a scalar loss.
pub fn grad_check<F>(build: F, params: &ParamValues, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamValues) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, params)?;
    let grads = tape.backward(loss)?;
    let kink_margin = tape.kink_margin();

    let eval = |p: &ParamValues| -> Result<f64> {
        let mut t = Tape::new();
        let l = build(&mut t, p)?;
        Ok(t.scalar_value(l))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        per_param: BTreeMap::new(),
        kink_margin,
        coordinates: 0,
    };
    let mut work = params.clone();
    for (&id, values) in params {
        let analytic = grads
            .get(id)
            .ok_or_else(|| Error::contract(format!("graph never registered parameter {id}")))?;
        let mut param_max: f64 = 0.0;
        for j in 0..values.len() {
            let orig = values[j];
            work.get_mut(&id).expect("cloned")[j] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(&id).expect("cloned")[j] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(&id).expect("cloned")[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let floor = resolution_floor(plus.abs().max(minus.abs()), h);
            let a = analytic[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12).max(floor);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((id, j));
                report.worst_values = (analytic[j], numeric);
            }
            param_max = param_max.max(err);
            report.coordinates += 1;
        }
        report.per_param.insert(id, param_max);
    }
    Ok(report)
}
