//! Reverse-mode automatic differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records eagerly evaluated operations; [`Tape::backward`]
//! replays them in reverse, accumulating vector-Jacobian products. The op
//! set is exactly what the allocator models need: matmul, broadcast add,
//! elementwise arithmetic, sigmoid/tanh/ReLU/SiLU, row softmax, clamp and
//! min with pass-through subgradients, column concat/slice, reductions,
//! and B-spline basis expansion.
//!
//! Subgradient conventions at kinks: ReLU and abs use 0 at the origin,
//! clamp uses 1 strictly inside its bounds and 0 at or outside them, and
//! elementwise min sends the gradient to its first operand on ties. The
//! tape tracks the smallest distance any kinked op saw to its kink during
//! the forward pass (`kink_gap`) so gradient checks can exclude
//! kink-adjacent evaluations.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::spline::SplineGrid;
use super::tensor::Tensor;
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    Div(Var, Var),
    ScaleConst(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Silu(Var),
    Abs(Var),
    Square(Var),
    Softmax(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    SplineBasis(Var, Rc<SplineGrid>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulScalar(..) => "mul_scalar",
            Op::Div(..) => "div",
            Op::ScaleConst(..) => "scale_const",
            Op::AddConst(..) => "add_const",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Silu(..) => "silu",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Softmax(..) => "softmax",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::SumCols(..) => "sum_cols",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::SplineBasis(..) => "spline_basis",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only computation tape. Values are computed eagerly as ops are
/// recorded; gradients become available after [`Tape::backward`].
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Vec<f64>>>>,
    kink_gap: Cell<f64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
            kink_gap: Cell::new(f64::INFINITY),
        }
    }

    /// Smallest distance to a kink (ReLU/abs origin, clamp bound, min tie)
    /// observed across all forward evaluations on this tape.
    pub fn kink_gap(&self) -> f64 {
        self.kink_gap.get()
    }

    fn note_kink(&self, gap: f64) {
        if gap < self.kink_gap.get() {
            self.kink_gap.set(gap);
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers an input node.
    pub fn input(&self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    /// Registers a constant node (identical to an input; gradients that
    /// reach it are simply never read).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.numel(), 1);
        nodes[v.0].value.values()[0]
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dims2()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if it received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let g = grads.get(v.0)?.as_ref()?;
        let shape = self.nodes.borrow()[v.0].value.shape().to_vec();
        Some(Tensor::new(shape, g.clone()).expect("gradient buffer matches node shape"))
    }

    fn push_unchecked(&self, value: Tensor, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> Result<Var, NumericsError> {
        if !values.iter().all(|v| v.is_finite()) {
            let node = self.nodes.borrow().len();
            return Err(NumericsError::NonFinite {
                node,
                op: op.name(),
            });
        }
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, values.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Tensor::new(shape, values).expect("op produced a well-formed tensor"),
            op,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn shape_err(op: &'static str, detail: String) -> NumericsError {
        NumericsError::ShapeMismatch { op, detail }
    }

    // ── op constructors ─────────────────────────────────────────────────

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != br {
            return Err(Self::shape_err(
                "matmul",
                format!("lhs {}x{} vs rhs {}x{}", ar, ac, br, bc),
            ));
        }
        let mut out = vec![0.0; ar * bc];
        {
            let nodes = self.nodes.borrow();
            let av = nodes[a.0].value.values();
            let bv = nodes[b.0].value.values();
            matmul_accum(av, ar, ac, bv, bc, &mut out);
        }
        self.push(vec![ar, bc], out, Op::Matmul(a, b))
    }

    fn binary_same_shape(
        &self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumericsError> {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let bv = &nodes[b.0].value;
        if av.dims2() != bv.dims2() {
            let detail = format!("{:?} vs {:?}", av.shape(), bv.shape());
            drop(nodes);
            return Err(Self::shape_err(name, detail));
        }
        let shape = av.shape().to_vec();
        let values: Vec<f64> = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        drop(nodes);
        self.push(shape, values, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary_same_shape("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum. On ties the gradient goes to `a`.
    pub fn minimum(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        {
            let nodes = self.nodes.borrow();
            for (&x, &y) in nodes[a.0].value.values().iter().zip(nodes[b.0].value.values()) {
                self.note_kink((x - y).abs());
            }
        }
        self.binary_same_shape("minimum", a, b, Op::Minimum(a, b), f64::min)
    }

    /// Adds a row vector `b` (shape `[c]` or `[1, c]`) to every row of `a`.
    pub fn add_bias(&self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != ac {
            return Err(Self::shape_err(
                "add_bias",
                format!("matrix {}x{} vs bias {}x{}", ar, ac, br, bc),
            ));
        }
        let mut values = Vec::with_capacity(ar * ac);
        {
            let nodes = self.nodes.borrow();
            let av = nodes[a.0].value.values();
            let bv = nodes[b.0].value.values();
            for row in av.chunks_exact(ac) {
                values.extend(row.iter().zip(bv).map(|(&x, &y)| x + y));
            }
        }
        self.push(vec![ar, ac], values, Op::AddBias(a, b))
    }

    /// Multiplies every element of `a` by the single-element node `s`.
    pub fn mul_scalar(&self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (sr, sc) = self.dims(s);
        if sr * sc != 1 {
            return Err(Self::shape_err(
                "mul_scalar",
                format!("scale operand has shape {}x{}", sr, sc),
            ));
        }
        let nodes = self.nodes.borrow();
        let shape = nodes[a.0].value.shape().to_vec();
        let sv = nodes[s.0].value.values()[0];
        let values: Vec<f64> = nodes[a.0].value.values().iter().map(|&x| x * sv).collect();
        drop(nodes);
        self.push(shape, values, Op::MulScalar(a, s))
    }

    fn unary(
        &self,
        v: Var,
        op: Op,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var, NumericsError> {
        let nodes = self.nodes.borrow();
        let shape = nodes[v.0].value.shape().to_vec();
        let values: Vec<f64> = nodes[v.0].value.values().iter().map(|&x| f(x)).collect();
        drop(nodes);
        self.push(shape, values, op)
    }

    pub fn scale_const(&self, v: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(v, Op::ScaleConst(v, c), |x| x * c)
    }

    pub fn add_const(&self, v: Var, c: f64) -> Result<Var, NumericsError> {
        self.unary(v, Op::AddConst(v), |x| x + c)
    }

    pub fn sigmoid(&self, v: Var) -> Result<Var, NumericsError> {
        self.unary(v, Op::Sigmoid(v), sigmoid)
    }

    pub fn tanh(&self, v: Var) -> Result<Var, NumericsError> {
        self.unary(v, Op::Tanh(v), f64::tanh)
    }

    pub fn relu(&self, v: Var) -> Result<Var, NumericsError> {
        {
            let nodes = self.nodes.borrow();
            for &x in nodes[v.0].value.values() {
                self.note_kink(x.abs());
            }
        }
        self.unary(v, Op::Relu(v), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn silu(&self, v: Var) -> Result<Var, NumericsError> {
        self.unary(v, Op::Silu(v), |x| x * sigmoid(x))
    }

    pub fn abs(&self, v: Var) -> Result<Var, NumericsError> {
        {
            let nodes = self.nodes.borrow();
            for &x in nodes[v.0].value.values() {
                self.note_kink(x.abs());
            }
        }
        self.unary(v, Op::Abs(v), f64::abs)
    }

    pub fn square(&self, v: Var) -> Result<Var, NumericsError> {
        self.unary(v, Op::Square(v), |x| x * x)
    }

    /// Clamp with constant bounds. Subgradient is 1 strictly inside the
    /// bounds and 0 at or outside them.
    pub fn clamp(&self, v: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        {
            let nodes = self.nodes.borrow();
            for &x in nodes[v.0].value.values() {
                self.note_kink((x - lo).abs());
                self.note_kink((x - hi).abs());
            }
        }
        self.unary(v, Op::Clamp(v, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Numerically stable softmax applied to each row independently.
    pub fn softmax(&self, v: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(v);
        let mut values = Vec::with_capacity(r * c);
        {
            let nodes = self.nodes.borrow();
            for row in nodes[v.0].value.values().chunks_exact(c) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                values.extend(exps.iter().map(|e| e / sum));
            }
        }
        self.push(vec![r, c], values, Op::Softmax(v))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(Self::shape_err("concat_cols", "no operands".into()));
        }
        let (r0, _) = self.dims(parts[0]);
        let mut total_cols = 0usize;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != r0 {
                return Err(Self::shape_err(
                    "concat_cols",
                    format!("row counts differ: {} vs {}", r0, r),
                ));
            }
            total_cols += c;
        }
        let mut values = Vec::with_capacity(r0 * total_cols);
        {
            let nodes = self.nodes.borrow();
            for i in 0..r0 {
                for &p in parts {
                    let t = &nodes[p.0].value;
                    let (_, c) = t.dims2();
                    values.extend_from_slice(&t.values()[i * c..(i + 1) * c]);
                }
            }
        }
        self.push(
            vec![r0, total_cols],
            values,
            Op::ConcatCols(parts.to_vec()),
        )
    }

    /// Columns `from..to` of a matrix.
    pub fn slice_cols(&self, v: Var, from: usize, to: usize) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(v);
        if from >= to || to > c {
            return Err(Self::shape_err(
                "slice_cols",
                format!("range {}..{} of {} columns", from, to, c),
            ));
        }
        let w = to - from;
        let mut values = Vec::with_capacity(r * w);
        {
            let nodes = self.nodes.borrow();
            let src = nodes[v.0].value.values();
            for i in 0..r {
                values.extend_from_slice(&src[i * c + from..i * c + to]);
            }
        }
        self.push(vec![r, w], values, Op::SliceCols(v, from, to))
    }

    /// Per-row sum: `r x c -> r x 1`.
    pub fn sum_cols(&self, v: Var) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(v);
        let mut values = Vec::with_capacity(r);
        {
            let nodes = self.nodes.borrow();
            for row in nodes[v.0].value.values().chunks_exact(c) {
                values.push(row.iter().sum());
            }
        }
        self.push(vec![r, 1], values, Op::SumCols(v))
    }

    pub fn sum_all(&self, v: Var) -> Result<Var, NumericsError> {
        let nodes = self.nodes.borrow();
        let s: f64 = nodes[v.0].value.values().iter().sum();
        drop(nodes);
        self.push(vec![1], vec![s], Op::SumAll(v))
    }

    pub fn mean_all(&self, v: Var) -> Result<Var, NumericsError> {
        let nodes = self.nodes.borrow();
        let n = nodes[v.0].value.numel() as f64;
        let s: f64 = nodes[v.0].value.values().iter().sum();
        drop(nodes);
        self.push(vec![1], vec![s / n], Op::MeanAll(v))
    }

    /// Expands each element into its B-spline basis values:
    /// `r x c -> r x (c * n_basis)`, input-major column blocks.
    pub fn spline_basis(&self, v: Var, grid: &Rc<SplineGrid>) -> Result<Var, NumericsError> {
        let (r, c) = self.dims(v);
        let nb = grid.n_basis();
        let mut values = vec![0.0; r * c * nb];
        {
            let nodes = self.nodes.borrow();
            let src = nodes[v.0].value.values();
            for (i, &x) in src.iter().enumerate() {
                grid.basis(x, &mut values[i * nb..(i + 1) * nb]);
            }
        }
        self.push(
            vec![r, c * nb],
            values,
            Op::SplineBasis(v, Rc::clone(grid)),
        )
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Gradients are retrievable through
    /// [`Tape::grad`] afterwards. Calling it twice overwrites the previous
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<(), NumericsError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(
                nodes[loss.0].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    let (ar, ac) = nodes[a.0].value.dims2();
                    let (_, bc) = nodes[b.0].value.dims2();
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    {
                        let da = grad_buf(&mut grads, a.0, ar * ac);
                        // dA[i,k] += sum_j G[i,j] * B[k,j]
                        for i in 0..ar {
                            let grow = &g[i * bc..(i + 1) * bc];
                            let darow = &mut da[i * ac..(i + 1) * ac];
                            for (k, dav) in darow.iter_mut().enumerate() {
                                let brow = &bv[k * bc..(k + 1) * bc];
                                *dav += dot(grow, brow);
                            }
                        }
                    }
                    let db = grad_buf(&mut grads, b.0, ac * bc);
                    // dB[k,j] += sum_i A[i,k] * G[i,j]
                    for i in 0..ar {
                        let grow = &g[i * bc..(i + 1) * bc];
                        let arow = &av[i * ac..(i + 1) * ac];
                        for (k, &aik) in arow.iter().enumerate() {
                            if aik != 0.0 {
                                axpy(aik, grow, &mut db[k * bc..(k + 1) * bc]);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, grad_buf(&mut grads, a.0, g.len()));
                    axpy(1.0, &g, grad_buf(&mut grads, b.0, g.len()));
                }
                Op::AddBias(a, b) => {
                    let (_, c) = nodes[a.0].value.dims2();
                    axpy(1.0, &g, grad_buf(&mut grads, a.0, g.len()));
                    let db = grad_buf(&mut grads, b.0, c);
                    for row in g.chunks_exact(c) {
                        axpy(1.0, row, db);
                    }
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &g, grad_buf(&mut grads, a.0, g.len()));
                    axpy(-1.0, &g, grad_buf(&mut grads, b.0, g.len()));
                }
                Op::Mul(a, b) => {
                    let bv = nodes[b.0].value.values();
                    let av = nodes[a.0].value.values();
                    {
                        let da = grad_buf(&mut grads, a.0, g.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi * y;
                        }
                    }
                    let db = grad_buf(&mut grads, b.0, g.len());
                    for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(av) {
                        *d += gi * x;
                    }
                }
                Op::MulScalar(a, s) => {
                    let sv = nodes[s.0].value.values()[0];
                    let av = nodes[a.0].value.values();
                    {
                        let da = grad_buf(&mut grads, a.0, g.len());
                        axpy(sv, &g, da);
                    }
                    let ds = grad_buf(&mut grads, s.0, 1);
                    ds[0] += dot(&g, av);
                }
                Op::Div(a, b) => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    {
                        let da = grad_buf(&mut grads, a.0, g.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gi / y;
                        }
                    }
                    let db = grad_buf(&mut grads, b.0, g.len());
                    for (((d, &gi), &x), &y) in db.iter_mut().zip(&g).zip(av).zip(bv) {
                        *d -= gi * x / (y * y);
                    }
                }
                Op::ScaleConst(a, c) => {
                    axpy(*c, &g, grad_buf(&mut grads, a.0, g.len()));
                }
                Op::AddConst(a) => {
                    axpy(1.0, &g, grad_buf(&mut grads, a.0, g.len()));
                }
                Op::Sigmoid(a) => {
                    let yv = node.value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(yv) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let yv = node.value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(yv) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Relu(a) => {
                    let xv = nodes[a.0].value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(xv) {
                        if x > 0.0 {
                            *d += gi;
                        }
                    }
                }
                Op::Silu(a) => {
                    let xv = nodes[a.0].value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(xv) {
                        let s = sigmoid(x);
                        *d += gi * s * (1.0 + x * (1.0 - s));
                    }
                }
                Op::Abs(a) => {
                    let xv = nodes[a.0].value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(xv) {
                        // signum with derivative 0 exactly at the origin
                        if x > 0.0 {
                            *d += gi;
                        } else if x < 0.0 {
                            *d -= gi;
                        }
                    }
                }
                Op::Square(a) => {
                    let xv = nodes[a.0].value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(xv) {
                        *d += gi * 2.0 * x;
                    }
                }
                Op::Softmax(a) => {
                    let (_, c) = nodes[a.0].value.dims2();
                    let yv = node.value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((drow, grow), yrow) in da
                        .chunks_exact_mut(c)
                        .zip(g.chunks_exact(c))
                        .zip(yv.chunks_exact(c))
                    {
                        let inner = dot(grow, yrow);
                        for ((d, &gi), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (gi - inner);
                        }
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let xv = nodes[a.0].value.values();
                    let da = grad_buf(&mut grads, a.0, g.len());
                    for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(xv) {
                        if x > *lo && x < *hi {
                            *d += gi;
                        }
                    }
                }
                Op::Minimum(a, b) => {
                    let av = nodes[a.0].value.values();
                    let bv = nodes[b.0].value.values();
                    {
                        let da = grad_buf(&mut grads, a.0, g.len());
                        for (((d, &gi), &x), &y) in da.iter_mut().zip(&g).zip(av).zip(bv) {
                            if x <= y {
                                *d += gi;
                            }
                        }
                    }
                    let db = grad_buf(&mut grads, b.0, g.len());
                    for (((d, &gi), &x), &y) in db.iter_mut().zip(&g).zip(av).zip(bv) {
                        if y < x {
                            *d += gi;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (rows, total_cols) = node.value.dims2();
                    let widths: Vec<usize> =
                        parts.iter().map(|p| nodes[p.0].value.dims2().1).collect();
                    for (pi, &p) in parts.iter().enumerate() {
                        let w = widths[pi];
                        let offset: usize = widths[..pi].iter().sum();
                        let dp = grad_buf(&mut grads, p.0, rows * w);
                        for i in 0..rows {
                            axpy(
                                1.0,
                                &g[i * total_cols + offset..i * total_cols + offset + w],
                                &mut dp[i * w..(i + 1) * w],
                            );
                        }
                    }
                }
                Op::SliceCols(a, from, to) => {
                    let (rows, c) = nodes[a.0].value.dims2();
                    let w = to - from;
                    let da = grad_buf(&mut grads, a.0, rows * c);
                    for i in 0..rows {
                        axpy(
                            1.0,
                            &g[i * w..(i + 1) * w],
                            &mut da[i * c + from..i * c + to],
                        );
                    }
                }
                Op::SumCols(a) => {
                    let (rows, c) = nodes[a.0].value.dims2();
                    let da = grad_buf(&mut grads, a.0, rows * c);
                    for (i, drow) in da.chunks_exact_mut(c).enumerate() {
                        let gi = g[i];
                        for d in drow {
                            *d += gi;
                        }
                    }
                }
                Op::SumAll(a) => {
                    let n = nodes[a.0].value.numel();
                    let da = grad_buf(&mut grads, a.0, n);
                    for d in da {
                        *d += g[0];
                    }
                }
                Op::MeanAll(a) => {
                    let n = nodes[a.0].value.numel();
                    let gi = g[0] / n as f64;
                    let da = grad_buf(&mut grads, a.0, n);
                    for d in da {
                        *d += gi;
                    }
                }
                Op::SplineBasis(a, grid) => {
                    let xv = nodes[a.0].value.values();
                    let nb = grid.n_basis();
                    let da = grad_buf(&mut grads, a.0, xv.len());
                    let mut deriv = vec![0.0; nb];
                    for (i, &x) in xv.iter().enumerate() {
                        grid.basis_derivative(x, &mut deriv);
                        da[i] += dot(&g[i * nb..(i + 1) * nb], &deriv);
                    }
                }
            }
        }

        drop(nodes);
        *self.grads.borrow_mut() = grads;
        Ok(())
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matmul_accum(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize, out: &mut [f64]) {
    for i in 0..ar {
        let arow = &a[i * ac..(i + 1) * ac];
        let orow = &mut out[i * bc..(i + 1) * bc];
        for (k, &aik) in arow.iter().enumerate() {
            if aik != 0.0 {
                axpy(aik, &b[k * bc..(k + 1) * bc], orow);
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
