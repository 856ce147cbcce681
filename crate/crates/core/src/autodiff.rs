//! Tape-based reverse-mode differentiation over dense `f64` vectors.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation as a
//! node holding its forward value. Parameters are never copied onto the
//! tape: ops such as [`Graph::affine`] and [`Graph::embed`] read them in
//! place and [`Graph::backward`] scatters their gradients into a
//! [`Gradients`] buffer shaped like the store.

use std::rc::Rc;
use std::sync::Arc;

/// Row-major dense matrix. Vectors are `rows x 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

/// Gradient buffer mirroring the shapes of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.tensors.iter_mut().flat_map(|t| t.data.iter_mut()) {
            *x *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// Column-sparse constant matrix: `columns[j]` lists `(row, value)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseColumns {
    pub rows: usize,
    pub columns: Vec<Vec<(usize, f64)>>,
}

impl SparseColumns {
    /// Dense `M w`.
    pub fn mul_vec(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (col, &w) in self.columns.iter().zip(weights) {
            for &(r, v) in col {
                out[r] += v * w;
            }
        }
        out
    }
}

/// Node handle on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Embed {
        table: ParamId,
        row: usize,
    },
    Affine {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick {
        x: Var,
        index: usize,
    },
    WeightedSum {
        columns: Rc<[Var]>,
        weights: Var,
    },
    LexLog {
        matrix: Arc<SparseColumns>,
        weights: Var,
    },
    Sum(Vec<Var>),
    Scale(Var, f64),
    ConstDot(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Recording tape bound to one parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// Row `row` of an embedding table.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Var {
        let value = self.params.get(table).row(row).to_vec();
        self.push(value, Op::Embed { table, row })
    }

    /// `W x (+ b)`.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = self.params.get(w);
        let xv = &self.nodes[x.0].value;
        debug_assert_eq!(wt.cols, xv.len(), "{}", self.params.name(w));
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wt.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            *o += wt.row(r).iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(out, Op::Affine { w, b, x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|&p| self.len(p)).sum());
        for &p in parts {
            v.extend_from_slice(self.value(p));
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|&a| sigmoid(a)).collect();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| a.tanh()).collect();
        self.push(v, Op::Tanh(x))
    }

    /// `1 - x` elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let v = self.value(x).iter().map(|a| 1.0 - a).collect();
        self.push(v, Op::OneMinus(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .sum();
        self.push(vec![s], Op::Dot(a, b))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax(self.value(x));
        self.push(v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = log_softmax(self.value(x));
        self.push(v, Op::LogSoftmax(x))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let v = vec![self.value(x)[index]];
        self.push(v, Op::Pick { x, index })
    }

    /// `sum_j weights[j] * columns[j]`.
    pub fn weighted_sum(&mut self, columns: Rc<[Var]>, weights: Var) -> Var {
        let w = self.value(weights);
        debug_assert_eq!(w.len(), columns.len());
        let mut out = vec![0.0; self.len(columns[0])];
        for (&c, &wj) in columns.iter().zip(w) {
            for (o, x) in out.iter_mut().zip(self.value(c)) {
                *o += wj * x;
            }
        }
        self.push(out, Op::WeightedSum { columns, weights })
    }

    /// `ln(M w + eps)` for a constant sparse `M`.
    pub fn lex_log(&mut self, matrix: Arc<SparseColumns>, weights: Var, eps: f64) -> Var {
        let v = matrix
            .mul_vec(self.value(weights))
            .into_iter()
            .map(|p| (p + eps).ln())
            .collect();
        self.push(v, Op::LexLog { matrix, weights })
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut v = vec![0.0; self.len(parts[0])];
        for &p in parts {
            for (o, x) in v.iter_mut().zip(self.value(p)) {
                *o += x;
            }
        }
        self.push(v, Op::Sum(parts.to_vec()))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x).iter().map(|a| a * k).collect();
        self.push(v, Op::Scale(x, k))
    }

    /// Scalar `x . c` for a constant vector `c`.
    pub fn const_dot(&mut self, x: Var, c: Vec<f64>) -> Var {
        let s = self.value(x).iter().zip(&c).map(|(a, b)| a * b).sum();
        self.push(vec![s], Op::ConstDot(x, c))
    }

    /// Accumulates `d loss / d param` into `grads`. `loss` must be scalar.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.len(loss), 1, "backward needs a scalar");
        let mut adj: Vec<Vec<f64>> = (0..=loss.0).map(|_| Vec::new()).collect();
        adj[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adj[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Embed { table, row } => {
                    let t = &mut grads.tensors[table.0];
                    let cols = t.cols;
                    for (d, gi) in t.data[row * cols..(row + 1) * cols].iter_mut().zip(&g) {
                        *d += gi;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = self.value(*x);
                    let gw = &mut grads.tensors[w.0];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            let row = &mut gw.data[r * wt.cols..(r + 1) * wt.cols];
                            for (d, xc) in row.iter_mut().zip(xv) {
                                *d += gr * xc;
                            }
                        }
                    }
                    if let Some(b) = b {
                        for (d, gi) in grads.tensors[b.0].data.iter_mut().zip(&g) {
                            *d += gi;
                        }
                    }
                    let dx = accum(&mut adj, *x, xv.len());
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            for (d, wv) in dx.iter_mut().zip(wt.row(r)) {
                                *d += gr * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g);
                    add_into(accum(&mut adj, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for ((d, gi), y) in accum(&mut adj, *a, g.len()).iter_mut().zip(&g).zip(bv) {
                        *d += gi * y;
                    }
                    for ((d, gi), y) in accum(&mut adj, *b, g.len()).iter_mut().zip(&g).zip(av) {
                        *d += gi * y;
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.len(p);
                        add_into(accum(&mut adj, p, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.len(*x);
                    add_into(&mut accum(&mut adj, *x, n)[*start..*start + g.len()], &g);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let d = accum(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = accum(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::OneMinus(x) => {
                    for (d, gi) in accum(&mut adj, *x, g.len()).iter_mut().zip(&g) {
                        *d -= gi;
                    }
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    for (d, y) in accum(&mut adj, *a, av.len()).iter_mut().zip(bv) {
                        *d += g0 * y;
                    }
                    for (d, y) in accum(&mut adj, *b, bv.len()).iter_mut().zip(av) {
                        *d += g0 * y;
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let inner: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let d = accum(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        d[i] += y[i] * (g[i] - inner);
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let total: f64 = g.iter().sum();
                    let d = accum(&mut adj, *x, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] - y[i].exp() * total;
                    }
                }
                Op::Pick { x, index } => {
                    let n = self.len(*x);
                    accum(&mut adj, *x, n)[*index] += g[0];
                }
                Op::WeightedSum { columns, weights } => {
                    let w = self.value(*weights).to_vec();
                    let mut dw = vec![0.0; w.len()];
                    for (j, &c) in columns.iter().enumerate() {
                        let cv = self.value(c);
                        dw[j] = cv.iter().zip(&g).map(|(a, b)| a * b).sum();
                        for (d, gi) in accum(&mut adj, c, cv.len()).iter_mut().zip(&g) {
                            *d += w[j] * gi;
                        }
                    }
                    add_into(accum(&mut adj, *weights, w.len()), &dw);
                }
                Op::LexLog { matrix, weights } => {
                    let y = &node.value;
                    let n = self.len(*weights);
                    let d = accum(&mut adj, *weights, n);
                    for (j, col) in matrix.columns.iter().enumerate() {
                        d[j] += col.iter().map(|&(r, p)| g[r] * p / y[r].exp()).sum::<f64>();
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        add_into(accum(&mut adj, p, g.len()), &g);
                    }
                }
                Op::Scale(x, k) => {
                    for (d, gi) in accum(&mut adj, *x, g.len()).iter_mut().zip(&g) {
                        *d += k * gi;
                    }
                }
                Op::ConstDot(x, c) => {
                    let g0 = g[0];
                    for (d, ci) in accum(&mut adj, *x, c.len()).iter_mut().zip(c) {
                        *d += g0 * ci;
                    }
                }
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accum(adj: &mut [Vec<f64>], v: Var, len: usize) -> &mut Vec<f64> {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    slot
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId, ParamId) {
        let mut s = ParamStore::new();
        let w = s.add(
            "w",
            Tensor {
                rows: 3,
                cols: 2,
                data: vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.7],
            },
        );
        let b = s.add(
            "b",
            Tensor {
                rows: 3,
                cols: 1,
                data: vec![0.05, -0.1, 0.2],
            },
        );
        (s, w, b)
    }

    /// Builds a scalar that exercises every op once.
    fn everything(g: &mut Graph, w: ParamId, b: ParamId) -> Var {
        let x = g.input(vec![0.4, -0.9]);
        let h = g.affine(w, Some(b), x);
        let s = g.sigmoid(h);
        let t = g.tanh(h);
        let m = g.mul(s, t);
        let om = g.one_minus(s);
        let a = g.add(m, om);
        let c = g.concat(&[a, x]);
        let sl = g.slice(c, 1, 3);
        let sm = g.softmax(sl);
        let ls = g.log_softmax(a);
        let cols: Rc<[Var]> = Rc::from(vec![a, h, sm]);
        let ws = g.weighted_sum(cols, sm);
        let lex = Arc::new(SparseColumns {
            rows: 4,
            columns: vec![vec![(0, 0.5), (2, 0.5)], vec![], vec![(3, 0.9)]],
        });
        let ll = g.lex_log(lex, sm, 1e-3);
        let p = g.pick(ll, 3);
        let d = g.dot(ws, ls);
        let q = g.const_dot(ls, vec![1.0, -2.0, 0.5]);
        let sum = g.sum(&[p, d, q]);
        let e = g.embed(w, 1);
        let de = g.dot(e, x);
        let tot = g.add(sum, de);
        g.scale(tot, 1.7)
    }

    #[test]
    fn gradients_match_central_differences() {
        let (mut s, w, b) = store();
        let mut grads = Gradients::zeros_like(&s);
        {
            let mut g = Graph::new(&s);
            let loss = everything(&mut g, w, b);
            g.backward(loss, &mut grads);
        }
        let h = 1e-6;
        for id in [w, b] {
            for k in 0..s.get(id).data.len() {
                let orig = s.get(id).data[k];
                s.get_mut(id).data[k] = orig + h;
                let up = {
                    let mut g = Graph::new(&s);
                    let l = everything(&mut g, w, b);
                    g.scalar(l)
                };
                s.get_mut(id).data[k] = orig - h;
                let down = {
                    let mut g = Graph::new(&s);
                    let l = everything(&mut g, w, b);
                    g.scalar(l)
                };
                s.get_mut(id).data[k] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).data[k];
                assert!(
                    (numeric - analytic).abs() < 1e-7 * (1.0 + numeric.abs()),
                    "{}[{k}]: {analytic} vs {numeric}",
                    s.name(id)
                );
            }
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let x = [1.0, -3.0, 0.5, 2.0];
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.456).collect();
        for (a, b) in softmax(&x).iter().zip(softmax(&shifted)) {
            assert!((a - b).abs() < 1e-12);
        }
        let big = softmax(&[1000.0, 0.0]);
        assert!(big[0].is_finite() && (big[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_and_scale() {
        let (s, _, _) = store();
        let mut g = Gradients::zeros_like(&s);
        g.tensors[0].data[0] = 3.0;
        g.tensors[1].data[2] = 4.0;
        assert_eq!(g.global_norm(), 5.0);
        g.scale(0.5);
        assert_eq!(g.global_norm(), 2.5);
    }
}
