//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Every backward rule is expressed with the same recorded operations as the
//! forward pass, so a gradient returned by [`Tape::grad`] is itself a [`Var`]
//! that can be differentiated again. The R1 penalty and the eikonal
//! regularizer both need that second pass.

use std::cell::RefCell;
use std::fmt;
use std::ops;
use std::rc::Rc;

/// Index value that reads as zero in a gather map and is skipped in a scatter map.
pub const PAD: usize = usize::MAX;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![value] }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn column_vector(data: Vec<f64>) -> Self {
        Self { rows: data.len(), cols: 1, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "elementwise shape mismatch");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor { rows: m, cols: n, data: out }
    }

    fn broadcast_row_op(&self, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!((row.rows, row.cols), (1, self.cols), "row broadcast shape mismatch");
        let data = self.data.iter().enumerate().map(|(i, &x)| f(x, row.data[i % self.cols])).collect();
        Tensor::new(self.rows, self.cols, data)
    }

    pub fn transpose(&self) -> Tensor {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MulConst(usize, Rc<Tensor>),
    AddConst(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Sin(usize),
    Cos(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Softplus(usize),
    Recip(usize),
    LeakyRelu(usize, f64),
    Gather(usize, Rc<[usize]>),
    ScatterAdd(usize, Rc<[usize]>),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    MulScalar(usize, usize),
    Powi(usize, i32),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Append-only record of operations. Values are computed eagerly.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Like [`Tape::leaf`] without copying the tensor.
    pub fn leaf_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, true)
    }

    pub fn constant_shared(&self, value: Rc<Tensor>) -> Var<'_> {
        self.push_rc(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        self.push_rc(Rc::new(value), op, tracked)
    }

    fn push_rc(&self, value: Rc<Tensor>, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn is_tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Gradient of a scalar output with respect to `wrt`.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let seed = Tensor::filled(output.rows(), output.cols(), 1.0);
        self.grad_seeded(&[(output, seed)], wrt)
    }

    /// Vector-Jacobian product: accumulates `seed_i^T d(output_i)/d(wrt)` over all seeds.
    pub fn grad_seeded<'t>(&'t self, seeds: &[(Var<'t>, Tensor)], wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let Some(top) = seeds.iter().map(|(v, _)| v.id).max() else {
            return wrt.iter().map(|w| w.zeros_like()).collect();
        };
        let mut grads: Vec<Option<Var<'t>>> = vec![None; top + 1];
        for (v, s) in seeds {
            assert_eq!(v.shape(), s.shape(), "seed shape mismatch");
            let s = self.constant(s.clone());
            accumulate(&mut grads, v.id, s);
        }
        for id in (0..=top).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.is_tracked(id) {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            let tracked = |i: usize| self.is_tracked(i);
            let mut send = |i: usize, make: &dyn Fn() -> Var<'t>| {
                if tracked(i) {
                    let contrib = make();
                    accumulate(&mut grads, i, contrib);
                }
            };
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    send(a, &|| g);
                    send(b, &|| g);
                }
                Op::Sub(a, b) => {
                    send(a, &|| g);
                    send(b, &|| -g);
                }
                Op::Mul(a, b) => {
                    send(a, &|| g * self.var(b));
                    send(b, &|| g * self.var(a));
                }
                Op::Neg(a) => send(a, &|| -g),
                Op::Scale(a, s) => send(a, &|| g.scale(s)),
                Op::Offset(a) | Op::AddConst(a) => send(a, &|| g),
                Op::MulConst(a, c) => send(a, &|| g.mul_const(Rc::clone(&c))),
                Op::MatMul(a, b) => {
                    send(a, &|| g.matmul(self.var(b).t()));
                    send(b, &|| self.var(a).t().matmul(g));
                }
                Op::Transpose(a) => send(a, &|| g.t()),
                Op::Reshape(a) => {
                    let (r, c) = self.value_of(a).shape();
                    send(a, &|| g.reshape(r, c));
                }
                Op::Sin(a) => send(a, &|| g * self.var(a).cos()),
                Op::Cos(a) => send(a, &|| -(g * self.var(a).sin())),
                Op::Exp(a) => send(a, &|| g * self.var(id)),
                Op::Log(a) => send(a, &|| g * self.var(a).recip()),
                Op::Sigmoid(a) => send(a, &|| {
                    let s = self.var(id);
                    g * (s - s * s)
                }),
                Op::Softplus(a) => send(a, &|| g * self.var(a).sigmoid()),
                Op::Recip(a) => send(a, &|| {
                    let r = self.var(id);
                    -(g * r * r)
                }),
                Op::LeakyRelu(a, slope) => send(a, &|| {
                    let mask = self.value_of(a).map(|x| if x > 0.0 { 1.0 } else { slope });
                    g.mul_const(Rc::new(mask))
                }),
                Op::Gather(a, idx) => {
                    let (r, c) = self.value_of(a).shape();
                    send(a, &|| g.scatter_add(Rc::clone(&idx), r, c));
                }
                Op::ScatterAdd(a, idx) => {
                    let (r, c) = self.value_of(a).shape();
                    send(a, &|| g.gather(Rc::clone(&idx), r, c));
                }
                Op::AddRow(a, r) => {
                    send(a, &|| g);
                    send(r, &|| g.col_sums());
                }
                Op::MulRow(a, r) => {
                    send(a, &|| g.mul_row(self.var(r)));
                    send(r, &|| (g * self.var(a)).col_sums());
                }
                Op::MulCol(a, c) => {
                    send(a, &|| g.mul_col(self.var(c)));
                    send(c, &|| (g * self.var(a)).row_sums());
                }
                Op::MulScalar(a, s) => {
                    send(a, &|| g.mul_scalar(self.var(s)));
                    send(s, &|| (g * self.var(a)).sum());
                }
                Op::Powi(a, n) => send(a, &|| g * self.var(a).powi(n - 1).scale(n as f64)),
            }
        }
        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => w.zeros_like(),
            })
            .collect()
    }
}

fn accumulate<'t>(grads: &mut [Option<Var<'t>>], id: usize, g: Var<'t>) {
    grads[id] = Some(match grads[id] {
        Some(prev) => prev + g,
        None => g,
    });
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.is_tracked(self.id)
    }

    fn zeros_like(&self) -> Var<'t> {
        let (r, c) = self.shape();
        self.tape.constant(Tensor::zeros(r, c))
    }

    fn unary(&self, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.value());
        self.tape.push(v, op, self.is_tracked())
    }

    fn binary(&self, other: Var<'t>, op: Op, f: impl Fn(&Tensor, &Tensor) -> Tensor) -> Var<'t> {
        let v = f(&self.value(), &other.value());
        let tracked = self.is_tracked() || other.is_tracked();
        self.tape.push(v, op, tracked)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        self.unary(Op::Reshape(self.id), |a| Tensor::new(rows, cols, a.data.clone()))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.map(|x| x * s))
    }

    /// Adds a scalar to every element.
    pub fn offset(self, s: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |a| a.map(|x| x + s))
    }

    pub fn mul_const(self, c: Rc<Tensor>) -> Var<'t> {
        let v = self.value().zip(&c, |a, b| a * b);
        self.tape.push(v, Op::MulConst(self.id, c), self.is_tracked())
    }

    pub fn add_const(self, c: &Tensor) -> Var<'t> {
        self.unary(Op::AddConst(self.id), |a| a.zip(c, |x, y| x + y))
    }

    pub fn sin(self) -> Var<'t> {
        self.unary(Op::Sin(self.id), |a| a.map(f64::sin))
    }

    pub fn cos(self) -> Var<'t> {
        self.unary(Op::Cos(self.id), |a| a.map(f64::cos))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |a| a.map(f64::ln))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(stable_sigmoid))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), |a| a.map(softplus))
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id), |a| a.map(|x| 1.0 / x))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| a.map(|x| if x > 0.0 { x } else { slope * x }))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        match n {
            0 => self.tape.constant(Tensor::filled(self.rows(), self.cols(), 1.0)),
            1 => self,
            _ => self.unary(Op::Powi(self.id, n), |a| a.map(|x| x.powi(n))),
        }
    }

    /// Adds a 1xC row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| a.broadcast_row_op(r, |x, y| x + y))
    }

    /// Multiplies every row elementwise by a 1xC row.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        self.binary(row, Op::MulRow(self.id, row.id), |a, r| a.broadcast_row_op(r, |x, y| x * y))
    }

    /// Multiplies every column elementwise by an Nx1 column.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        self.binary(col, Op::MulCol(self.id, col.id), |a, c| {
            assert_eq!((c.rows, c.cols), (a.rows, 1), "mul_col shape mismatch");
            let data = a.data.iter().enumerate().map(|(i, x)| x * c.data[i / a.cols]).collect();
            Tensor::new(a.rows, a.cols, data)
        })
    }

    /// Multiplies every element by a 1x1 value.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        self.binary(s, Op::MulScalar(self.id, s.id), |a, s| a.map(|x| x * s.item()))
    }

    /// `out[i] = self[index[i]]` over flat storage; [`PAD`] entries read zero.
    pub fn gather(self, index: Rc<[usize]>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(index.len(), rows * cols, "gather index length mismatch");
        let src = self.value();
        let data = index.iter().map(|&i| if i == PAD { 0.0 } else { src.data[i] }).collect();
        self.tape.push(Tensor::new(rows, cols, data), Op::Gather(self.id, index), self.is_tracked())
    }

    /// `out[index[i]] += self[i]` into a zero tensor of the given shape.
    pub fn scatter_add(self, index: Rc<[usize]>, rows: usize, cols: usize) -> Var<'t> {
        let src = self.value();
        assert_eq!(index.len(), src.len(), "scatter index length mismatch");
        let mut data = vec![0.0; rows * cols];
        for (&i, &x) in index.iter().zip(&src.data) {
            if i != PAD {
                data[i] += x;
            }
        }
        self.tape.push(Tensor::new(rows, cols, data), Op::ScatterAdd(self.id, index), self.is_tracked())
    }

    /// Repeats a 1xC row `n` times.
    pub fn broadcast_rows(self, n: usize) -> Var<'t> {
        let c = self.cols();
        assert_eq!(self.rows(), 1);
        let idx: Rc<[usize]> = (0..n * c).map(|i| i % c).collect();
        self.gather(idx, n, c)
    }

    /// Repeats an Nx1 column `c` times.
    pub fn broadcast_cols(self, c: usize) -> Var<'t> {
        let n = self.rows();
        assert_eq!(self.cols(), 1);
        let idx: Rc<[usize]> = (0..n * c).map(|i| i / c).collect();
        self.gather(idx, n, c)
    }

    pub fn broadcast_to(self, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(self.shape(), (1, 1));
        let idx: Rc<[usize]> = vec![0; rows * cols].into();
        self.gather(idx, rows, cols)
    }

    pub fn sum(self) -> Var<'t> {
        let idx: Rc<[usize]> = vec![0; self.value().len()].into();
        self.scatter_add(idx, 1, 1)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len();
        self.sum().scale(1.0 / n as f64)
    }

    /// Sums each row, giving Nx1.
    pub fn row_sums(self) -> Var<'t> {
        let (r, c) = self.shape();
        let idx: Rc<[usize]> = (0..r * c).map(|i| i / c).collect();
        self.scatter_add(idx, r, 1)
    }

    /// Sums each column, giving 1xC.
    pub fn col_sums(self) -> Var<'t> {
        let (r, c) = self.shape();
        let idx: Rc<[usize]> = (0..r * c).map(|i| i % c).collect();
        self.scatter_add(idx, 1, c)
    }

    pub fn select_rows(self, rows: &[usize]) -> Var<'t> {
        let c = self.cols();
        let idx: Rc<[usize]> = rows.iter().flat_map(|&r| (0..c).map(move |j| r * c + j)).collect();
        self.gather(idx, rows.len(), c)
    }

    /// Places row `i` of `self` at row `rows[i]` of an `n`-row zero tensor, summing collisions.
    pub fn scatter_rows(self, rows: &[usize], n: usize) -> Var<'t> {
        let c = self.cols();
        assert_eq!(rows.len(), self.rows());
        let idx: Rc<[usize]> = rows.iter().flat_map(|&r| (0..c).map(move |j| r * c + j)).collect();
        self.scatter_add(idx, n, c)
    }

    pub fn column(self, j: usize) -> Var<'t> {
        let (r, c) = self.shape();
        let idx: Rc<[usize]> = (0..r).map(|i| i * c + j).collect();
        self.gather(idx, r, 1)
    }

    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let (r, ca) = self.shape();
        let (r2, cb) = other.shape();
        assert_eq!(r, r2);
        let c = ca + cb;
        let ia: Rc<[usize]> = (0..r * ca).map(|i| (i / ca) * c + i % ca).collect();
        let ib: Rc<[usize]> = (0..r * cb).map(|i| (i / cb) * c + ca + i % cb).collect();
        self.scatter_add(ia, r, c) + other.scatter_add(ib, r, c)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a.zip(b, |x, y| x + y))
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a.zip(b, |x, y| x - y))
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a.zip(b, |x, y| x * y))
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |a| a.map(|x| -x))
    }
}
