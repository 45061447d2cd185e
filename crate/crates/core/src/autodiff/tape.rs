use super::{Gradients, ParamId, ParamStore, Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    AddRows(Var, Var),
    Mul(Var, Var),
    Scale(Var, Var),
    Affine(Var, S),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Gather(Var, Vec<usize>),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log(Var),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    shape: Vec<usize>,
    // empty for parameter leaves, which read through to the store
    value: Vec<S>,
}

/// Records a forward computation so it can be differentiated.
///
/// Parameters are referenced, not copied; each parameter gets at most one
/// leaf per tape.
pub struct Tape<'p, S: Real> {
    params: &'p ParamStore<S>,
    param_vars: Vec<Option<Var>>,
    nodes: Vec<Node<S>>,
}

fn check_finite<S: Real>(op: &'static str, v: &[S]) -> Result<(), TensorError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

impl<'p, S: Real> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape {
            params,
            param_vars: vec![None; params.len()],
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[S] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).value.data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> S {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>, value: Vec<S>, name: &'static str) -> Result<Var, TensorError> {
        check_finite(name, &value)?;
        self.nodes.push(Node { op, shape, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        let Tensor { shape, data } = t;
        self.nodes.push(Node {
            op: Op::Input,
            shape,
            value: data,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, data: Vec<S>) -> Var {
        self.input(Tensor::vector(data))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.params.get(id).value.shape().to_vec();
        self.nodes.push(Node {
            op: Op::Param(id),
            shape,
            value: Vec::new(),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand is a column vector; `trans_b` multiplies by the transpose of a
    /// rank-2 right operand.
    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, ka) = match sa.as_slice() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => return Err(self.mismatch("matmul", a, b)),
        };
        let (kb, n) = match (sb.as_slice(), trans_b) {
            ([k], _) => (*k, 1),
            ([k, n], false) => (*k, *n),
            ([n, k], true) => (*k, *n),
            _ => return Err(self.mismatch("matmul", a, b)),
        };
        if ka != kb {
            return Err(self.mismatch("matmul", a, b));
        }
        let k = ka;
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![S::zero(); m * n];
        if trans_b || n == 1 {
            // both operands are traversed along contiguous rows
            for i in 0..m {
                let row = &av[i * k..(i + 1) * k];
                for j in 0..n {
                    let col = &bv[j * k..(j + 1) * k];
                    let mut acc = S::zero();
                    for t in 0..k {
                        acc += row[t] * col[t];
                    }
                    out[i * n + j] = acc;
                }
            }
        } else {
            for i in 0..m {
                let row = &av[i * k..(i + 1) * k];
                let dst = &mut out[i * n..(i + 1) * n];
                for t in 0..k {
                    let x = row[t];
                    let src = &bv[t * n..(t + 1) * n];
                    for j in 0..n {
                        dst[j] += x * src[j];
                    }
                }
            }
        }
        let shape = match (sa.len(), sb.len()) {
            (1, 1) => vec![1],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        self.push(Op::MatMul { a, b, trans_b, m, k, n }, shape, out, "matmul")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a × bᵀ` for a rank-2 `b`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<Vec<S>, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        self.push(Op::Add(a, b), shape, out, "add")
    }

    /// Adds the vector `b` to every row of the matrix `a`.
    pub fn add_rows(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let cols = match self.shape(a) {
            [_, c] => *c,
            _ => return Err(self.mismatch("add_rows", a, b)),
        };
        if self.shape(b) != [cols] {
            return Err(self.mismatch("add_rows", a, b));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % cols])
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::AddRows(a, b), shape, out, "add_rows")
    }

    /// Pointwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul(a, b), shape, out, "mul")
    }

    /// Multiplies every entry of `a` by the one-element node `s`.
    pub fn scale(&mut self, a: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(self.mismatch("scale", a, s));
        }
        let k = self.scalar(s);
        let out = self.value(a).iter().map(|&x| x * k).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, s), shape, out, "scale")
    }

    /// `c - a`, elementwise.
    pub fn rsub(&mut self, c: S, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).iter().map(|&x| c - x).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Affine(a, c), shape, out, "rsub")
    }

    /// Concatenates rank-1 nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(self.mismatch("concat", parts[0], p));
            }
            out.extend_from_slice(self.value(p));
        }
        let len = out.len();
        self.push(Op::Concat(parts.to_vec()), vec![len], out, "concat")
    }

    /// Stacks equal-length rank-1 nodes into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let first = *rows.first().ok_or(TensorError::Empty("stack"))?;
        let width = self.shape(first).to_vec();
        if width.len() != 1 {
            return Err(self.mismatch("stack", first, first));
        }
        let mut out = Vec::with_capacity(rows.len() * width[0]);
        for &r in rows {
            if self.shape(r) != width.as_slice() {
                return Err(self.mismatch("stack", first, r));
            }
            out.extend_from_slice(self.value(r));
        }
        self.push(Op::Stack(rows.to_vec()), vec![rows.len(), width[0]], out, "stack")
    }

    /// Contiguous sub-range of a rank-1 node.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let total = match self.shape(a) {
            [n] => *n,
            s => {
                return Err(TensorError::OutOfRange {
                    op: "slice",
                    index: start,
                    shape: s.to_vec(),
                })
            }
        };
        if start + len > total {
            return Err(TensorError::OutOfRange {
                op: "slice",
                index: start + len,
                shape: vec![total],
            });
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice(a, start), vec![len], out, "slice")
    }

    /// Splits a rank-1 node into `parts` equal slices.
    pub fn split(&mut self, a: Var, parts: usize) -> Result<Vec<Var>, TensorError> {
        let total = self.value(a).len();
        if parts == 0 || !total.is_multiple_of(parts) {
            return Err(TensorError::ShapeMismatch {
                op: "split",
                left: self.shape(a).to_vec(),
                right: vec![parts],
            });
        }
        let len = total / parts;
        (0..parts).map(|i| self.slice(a, i * len, len)).collect()
    }

    /// Row `index` of a matrix: embedding lookup.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var, TensorError> {
        let (rows, cols) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => {
                return Err(TensorError::OutOfRange {
                    op: "row",
                    index,
                    shape: s.to_vec(),
                })
            }
        };
        if index >= rows {
            return Err(TensorError::OutOfRange {
                op: "row",
                index,
                shape: vec![rows, cols],
            });
        }
        let out = self.value(a)[index * cols..(index + 1) * cols].to_vec();
        self.push(Op::Row(a, index), vec![cols], out, "row")
    }

    /// Selects entries of a rank-1 node (repeats allowed).
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.len()) {
            return Err(TensorError::OutOfRange {
                op: "gather",
                index: bad,
                shape: self.shape(a).to_vec(),
            });
        }
        let out = indices.iter().map(|&i| v[i]).collect();
        self.push(Op::Gather(a, indices.to_vec()), vec![indices.len()], out, "gather")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape, out, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape, out, "sigmoid")
    }

    /// Softmax over a rank-1 node.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        if self.shape(a).len() != 1 || self.value(a).is_empty() {
            return Err(self.mismatch("softmax", a, a));
        }
        let out = softmax(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::Softmax(a), shape, out, "softmax")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).iter().map(|x| x.ln()).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::Log(a), shape, out, "log")
    }

    /// Sum of all entries, as a one-element node.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let total = self.value(a).iter().copied().sum();
        self.push(Op::Sum(a), vec![1], vec![total], "sum")
    }

    /// Sum of several equal-shape nodes.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var, TensorError> {
        let (&first, rest) = terms.split_first().ok_or(TensorError::Empty("add_all"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }
}

pub(crate) fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Max-subtracted softmax.
pub(crate) fn softmax<S: Real>(v: &[S]) -> Vec<S> {
    let max = v.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: S = out.iter().copied().sum();
    out.iter_mut().for_each(|x| *x = *x / z);
    out
}

fn acc_into<S: Real>(grads: &mut [Option<Vec<S>>], v: Var, len: usize) -> &mut Vec<S> {
    grads[v.0].get_or_insert_with(|| vec![S::zero(); len])
}

/// Reverse pass from a scalar `loss`. Returns the gradient of every
/// parameter the loss depends on.
pub fn backward<S: Real>(tape: &Tape<'_, S>, loss: Var) -> Result<Gradients<S>, TensorError> {
    if tape.value(loss).len() != 1 {
        return Err(TensorError::NotScalar(tape.shape(loss).to_vec()));
    }
    let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
    grads[loss.0] = Some(vec![S::one()]);
    let mut out = Gradients::empty(tape.params.len());
    let size = |v: Var| tape.value(v).len();

    for i in (0..=loss.0).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &tape.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Param(id) => out.grads[id.0] = Some(g),
            &Op::MatMul { a, b, trans_b, m, k, n } => {
                let av = tape.value(a);
                let bv = tape.value(b);
                {
                    let da = acc_into(&mut grads, a, m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == S::zero() {
                                continue;
                            }
                            let dst = &mut da[i * k..(i + 1) * k];
                            if trans_b || n == 1 {
                                let col = &bv[j * k..(j + 1) * k];
                                for t in 0..k {
                                    dst[t] += gij * col[t];
                                }
                            } else {
                                for t in 0..k {
                                    dst[t] += gij * bv[t * n + j];
                                }
                            }
                        }
                    }
                }
                let db = acc_into(&mut grads, b, k * n);
                for i in 0..m {
                    let row = &av[i * k..(i + 1) * k];
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == S::zero() {
                            continue;
                        }
                        if trans_b || n == 1 {
                            let dst = &mut db[j * k..(j + 1) * k];
                            for t in 0..k {
                                dst[t] += gij * row[t];
                            }
                        } else {
                            for t in 0..k {
                                db[t * n + j] += gij * row[t];
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    let d = acc_into(&mut grads, v, g.len());
                    d.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                }
            }
            &Op::AddRows(a, b) => {
                let cols = size(b);
                let da = acc_into(&mut grads, a, g.len());
                da.iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                let db = acc_into(&mut grads, b, cols);
                for (idx, &y) in g.iter().enumerate() {
                    db[idx % cols] += y;
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (tape.value(a), tape.value(b));
                let da = acc_into(&mut grads, a, g.len());
                for t in 0..g.len() {
                    da[t] += g[t] * bv[t];
                }
                let db = acc_into(&mut grads, b, g.len());
                for t in 0..g.len() {
                    db[t] += g[t] * av[t];
                }
            }
            &Op::Scale(a, s) => {
                let k = tape.scalar(s);
                let av = tape.value(a);
                let ds: S = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                let da = acc_into(&mut grads, a, g.len());
                da.iter_mut().zip(&g).for_each(|(x, &y)| *x += y * k);
                acc_into(&mut grads, s, 1)[0] += ds;
            }
            &Op::Affine(a, _) => {
                let da = acc_into(&mut grads, a, g.len());
                da.iter_mut().zip(&g).for_each(|(x, &y)| *x -= y);
            }
            Op::Concat(parts) | Op::Stack(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = size(p);
                    let dp = acc_into(&mut grads, p, len);
                    dp.iter_mut().zip(&g[offset..offset + len]).for_each(|(x, &y)| *x += y);
                    offset += len;
                }
            }
            &Op::Slice(a, start) => {
                let da = acc_into(&mut grads, a, size(a));
                da[start..start + g.len()]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(x, &y)| *x += y);
            }
            &Op::Row(a, index) => {
                let cols = g.len();
                let da = acc_into(&mut grads, a, size(a));
                da[index * cols..(index + 1) * cols]
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(x, &y)| *x += y);
            }
            Op::Gather(a, indices) => {
                let da = acc_into(&mut grads, *a, size(*a));
                for (&ix, &y) in indices.iter().zip(&g) {
                    da[ix] += y;
                }
            }
            &Op::Tanh(a) => {
                let y = &node.value;
                let da = acc_into(&mut grads, a, g.len());
                for t in 0..g.len() {
                    da[t] += g[t] * (S::one() - y[t] * y[t]);
                }
            }
            &Op::Sigmoid(a) => {
                let y = &node.value;
                let da = acc_into(&mut grads, a, g.len());
                for t in 0..g.len() {
                    da[t] += g[t] * y[t] * (S::one() - y[t]);
                }
            }
            &Op::Softmax(a) => {
                let y = &node.value;
                let dot: S = g.iter().zip(y).map(|(&x, &p)| x * p).sum();
                let da = acc_into(&mut grads, a, g.len());
                for t in 0..g.len() {
                    da[t] += y[t] * (g[t] - dot);
                }
            }
            &Op::Log(a) => {
                let av = tape.value(a);
                let da = acc_into(&mut grads, a, g.len());
                for t in 0..g.len() {
                    da[t] += g[t] / av[t];
                }
            }
            &Op::Sum(a) => {
                let da = acc_into(&mut grads, a, size(a));
                da.iter_mut().for_each(|x| *x += g[0]);
            }
        }
    }
    for g in out.grads.iter().flatten() {
        check_finite("backward", g)?;
    }
    Ok(out)
}
