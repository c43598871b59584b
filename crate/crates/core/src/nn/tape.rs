//! Reverse-mode automatic differentiation over `f64` buffers.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`]; [`Tape::backward`] returns the gradient of a scalar
//! node with respect to every recorded parameter and every node.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use super::params::{ParamId, ParamStore};
use crate::{Error, Result, Tensor};

/// Index sentinel for [`Tape::gather`]: the output element is zero.
pub const PAD: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Vec<f64>),
    ScaleRows(usize, Vec<f64>),
    ScaleByScalar(usize, usize),
    Silu(usize),
    Exp(usize),
    Softplus(usize),
    Gather(usize, Vec<u32>),
    Concat { a: usize, b: usize, da: usize, db: usize },
    SumRows(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, usize>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Grads {
    pub fn var(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).and_then(|&(_, n)| self.nodes[n].as_deref())
    }

    /// `(parameter, gradient)` pairs for every parameter reached by the backward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params.iter().filter_map(|&(p, n)| self.nodes[n].as_deref().map(|g| (p, g)))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

#[inline]
fn silu(x: f64) -> f64 {
    x * crate::schedule::sigmoid(x)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    /// Constant input; gradients flow into it but not beyond.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn leaf_raw(&mut self, shape: &[usize], data: Vec<f64>) -> Var {
        self.push(shape.to_vec(), data, Op::Leaf)
    }

    /// Trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&n) = self.params.get(&id) {
            return Var(n);
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param);
        self.params.insert(id, v.0);
        v
    }

    /// Copy of `v`'s value with no gradient path back to `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf)
    }

    /// `x @ w + b` over the last dimension of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (&self.nodes[x.0].shape, &self.nodes[w.0].shape);
        let din = *xs.last().unwrap_or(&0);
        if ws.len() != 2 || ws[0] != din {
            return Err(Error::shape(&[din, ws.get(1).copied().unwrap_or(0)], ws));
        }
        let dout = ws[1];
        if let Some(b) = b {
            if self.nodes[b.0].value.len() != dout {
                return Err(Error::shape(&[dout], &self.nodes[b.0].shape));
            }
        }
        let rows = if din == 0 { 0 } else { self.nodes[x.0].value.len() / din };
        let mut out = vec![0.0; rows * dout];
        {
            let xv = &self.nodes[x.0].value;
            let wv = &self.nodes[w.0].value;
            let bv = b.map(|b| &self.nodes[b.0].value);
            for r in 0..rows {
                let orow = &mut out[r * dout..(r + 1) * dout];
                if let Some(bv) = bv {
                    orow.copy_from_slice(bv);
                }
                let xrow = &xv[r * din..(r + 1) * din];
                for (k, &xk) in xrow.iter().enumerate() {
                    if xk == 0.0 {
                        continue;
                    }
                    let wrow = &wv[k * dout..(k + 1) * dout];
                    for (o, &wk) in orow.iter_mut().zip(wrow) {
                        *o += xk * wk;
                    }
                }
            }
        }
        let mut shape = self.nodes[x.0].shape.clone();
        *shape.last_mut().expect("rank >= 1") = dout;
        Ok(self.push(shape, out, Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0) }))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        if na.value.len() != nb.value.len() {
            return Err(Error::shape(&na.shape, &nb.shape));
        }
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        Ok(self.push(shape, value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&x| x * s).collect();
        let shape = n.shape.clone();
        self.push(shape, value, Op::Scale(a.0, s))
    }

    /// Elementwise product with a constant buffer (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        let n = &self.nodes[a.0];
        if c.len() != n.value.len() {
            return Err(Error::shape(&n.shape, &[c.len()]));
        }
        let value = n.value.iter().zip(&c).map(|(&x, &y)| x * y).collect();
        let shape = n.shape.clone();
        Ok(self.push(shape, value, Op::MulConst(a.0, c)))
    }

    /// Multiply each leading-dimension entry by its own constant.
    pub fn scale_rows(&mut self, a: Var, s: Vec<f64>) -> Result<Var> {
        let n = &self.nodes[a.0];
        if s.is_empty() || n.value.len() % s.len() != 0 {
            return Err(Error::shape(&n.shape, &[s.len()]));
        }
        let m = n.value.len() / s.len();
        let value = n.value.iter().enumerate().map(|(i, &x)| x * s[i / m]).collect();
        let shape = n.shape.clone();
        Ok(self.push(shape, value, Op::ScaleRows(a.0, s)))
    }

    /// `a · s` for a single-element node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].value.len() != 1 {
            return Err(Error::shape(&[1], &self.nodes[s.0].shape));
        }
        let k = self.nodes[s.0].value[0];
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&x| x * k).collect();
        let shape = n.shape.clone();
        Ok(self.push(shape, value, Op::ScaleByScalar(a.0, s.0)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = &self.nodes[a.0];
        let value = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        self.push(shape, value, op)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, silu, Op::Silu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, crate::schedule::softplus, Op::Softplus(a.0))
    }

    /// `out[i] = a[index[i]]`, or zero where `index[i] == PAD`.
    pub fn gather(&mut self, a: Var, index: Vec<u32>, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::shape(shape, &[index.len()]));
        }
        let src = &self.nodes[a.0].value;
        let mut value = Vec::with_capacity(index.len());
        for &i in &index {
            if i == PAD {
                value.push(0.0);
            } else {
                value.push(*src.get(i as usize).ok_or(Error::Domain { what: "gather index", value: i as f64 })?);
            }
        }
        Ok(self.push(shape.to_vec(), value, Op::Gather(a.0, index)))
    }

    /// Concatenate along the last dimension; leading dimensions must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape(sa, sb));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = if da + db == 0 { 0 } else { (self.nodes[a.0].value.len() + self.nodes[b.0].value.len()) / (da + db) };
        let mut value = Vec::with_capacity(rows * (da + db));
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        for r in 0..rows {
            value.extend_from_slice(&va[r * da..(r + 1) * da]);
            value.extend_from_slice(&vb[r * db..(r + 1) * db]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = da + db;
        Ok(self.push(shape, value, Op::Concat { a: a.0, b: b.0, da, db }))
    }

    /// Sum over everything but the leading dimension: `[n, ...] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let n = &self.nodes[a.0];
        let rows = n.shape.first().copied().unwrap_or(1).max(1);
        let m = n.value.len() / rows;
        let value: Vec<f64> = if m == 0 { vec![0.0; rows] } else { n.value.chunks(m).map(|c| c.iter().sum()).collect() };
        self.push(vec![rows], value, Op::SumRows(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![1], vec![s], Op::Sum(a.0))
    }

    /// Gradient of the scalar `root` (seeded with 1).
    pub fn backward(&self, root: Var) -> Result<Grads> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::shape(&[1], &self.nodes[root.0].shape));
        }
        self.backward_with(root, vec![1.0])
    }

    /// Vector-Jacobian product of `root` with `seed`.
    pub fn backward_with(&self, root: Var, seed: Vec<f64>) -> Result<Grads> {
        if seed.len() != self.nodes[root.0].value.len() {
            return Err(Error::shape(&self.nodes[root.0].shape, &[seed.len()]));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::Linear { x, w, b } => {
                    let (x, w) = (*x, *w);
                    let din = *self.nodes[x].shape.last().unwrap();
                    let dout = *node.shape.last().unwrap();
                    let rows = gi.len() / dout.max(1);
                    let xv = &self.nodes[x].value;
                    let wv = &self.nodes[w].value;
                    {
                        let gx = accumulate(&mut g[x], xv.len());
                        for r in 0..rows {
                            let grow = &gi[r * dout..(r + 1) * dout];
                            let gxr = &mut gx[r * din..(r + 1) * din];
                            for (k, gxk) in gxr.iter_mut().enumerate() {
                                let wrow = &wv[k * dout..(k + 1) * dout];
                                let mut s = 0.0;
                                for (a, b) in grow.iter().zip(wrow) {
                                    s += a * b;
                                }
                                *gxk += s;
                            }
                        }
                    }
                    {
                        let gw = accumulate(&mut g[w], wv.len());
                        for r in 0..rows {
                            let grow = &gi[r * dout..(r + 1) * dout];
                            let xrow = &xv[r * din..(r + 1) * din];
                            for (k, &xk) in xrow.iter().enumerate() {
                                if xk == 0.0 {
                                    continue;
                                }
                                let gwr = &mut gw[k * dout..(k + 1) * dout];
                                for (a, &b) in gwr.iter_mut().zip(grow) {
                                    *a += xk * b;
                                }
                            }
                        }
                    }
                    if let Some(b) = *b {
                        let gb = accumulate(&mut g[b], dout);
                        for r in 0..rows {
                            for (a, &v) in gb.iter_mut().zip(&gi[r * dout..(r + 1) * dout]) {
                                *a += v;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (s, sign) in [(*a, 1.0), (*b, 1.0)] {
                        let ga = accumulate(&mut g[s], gi.len());
                        for (x, &y) in ga.iter_mut().zip(&gi) {
                            *x += sign * y;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for (s, sign) in [(*a, 1.0), (*b, -1.0)] {
                        let ga = accumulate(&mut g[s], gi.len());
                        for (x, &y) in ga.iter_mut().zip(&gi) {
                            *x += sign * y;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    {
                        let ga = accumulate(&mut g[a], gi.len());
                        for ((x, &y), &o) in ga.iter_mut().zip(&gi).zip(vb) {
                            *x += y * o;
                        }
                    }
                    let gb = accumulate(&mut g[b], gi.len());
                    for ((x, &y), &o) in gb.iter_mut().zip(&gi).zip(va) {
                        *x += y * o;
                    }
                }
                Op::Scale(a, s) => {
                    let ga = accumulate(&mut g[*a], gi.len());
                    for (x, &y) in ga.iter_mut().zip(&gi) {
                        *x += s * y;
                    }
                }
                Op::MulConst(a, c) => {
                    let ga = accumulate(&mut g[*a], gi.len());
                    for ((x, &y), &c) in ga.iter_mut().zip(&gi).zip(c) {
                        *x += c * y;
                    }
                }
                Op::ScaleRows(a, s) => {
                    let m = gi.len() / s.len();
                    let ga = accumulate(&mut g[*a], gi.len());
                    for (j, (x, &y)) in ga.iter_mut().zip(&gi).enumerate() {
                        *x += s[j / m] * y;
                    }
                }
                Op::ScaleByScalar(a, s) => {
                    let (a, s) = (*a, *s);
                    let k = self.nodes[s].value[0];
                    let va = &self.nodes[a].value;
                    let dot: f64 = gi.iter().zip(va).map(|(x, y)| x * y).sum();
                    {
                        let ga = accumulate(&mut g[a], gi.len());
                        for (x, &y) in ga.iter_mut().zip(&gi) {
                            *x += k * y;
                        }
                    }
                    accumulate(&mut g[s], 1)[0] += dot;
                }
                Op::Silu(a) => {
                    let va = &self.nodes[*a].value;
                    let ga = accumulate(&mut g[*a], gi.len());
                    for ((x, &y), &v) in ga.iter_mut().zip(&gi).zip(va) {
                        let s = crate::schedule::sigmoid(v);
                        *x += y * s * (1.0 + v * (1.0 - s));
                    }
                }
                Op::Exp(a) => {
                    let ga = accumulate(&mut g[*a], gi.len());
                    for ((x, &y), &o) in ga.iter_mut().zip(&gi).zip(&node.value) {
                        *x += y * o;
                    }
                }
                Op::Softplus(a) => {
                    let va = &self.nodes[*a].value;
                    let ga = accumulate(&mut g[*a], gi.len());
                    for ((x, &y), &v) in ga.iter_mut().zip(&gi).zip(va) {
                        *x += y * crate::schedule::sigmoid(v);
                    }
                }
                Op::Gather(a, index) => {
                    let len = self.nodes[*a].value.len();
                    let ga = accumulate(&mut g[*a], len);
                    for (&i, &y) in index.iter().zip(&gi) {
                        if i != PAD {
                            ga[i as usize] += y;
                        }
                    }
                }
                Op::Concat { a, b, da, db } => {
                    let (a, b, da, db) = (*a, *b, *da, *db);
                    let rows = gi.len() / (da + db).max(1);
                    {
                        let ga = accumulate(&mut g[a], rows * da);
                        for r in 0..rows {
                            for k in 0..da {
                                ga[r * da + k] += gi[r * (da + db) + k];
                            }
                        }
                    }
                    let gb = accumulate(&mut g[b], rows * db);
                    for r in 0..rows {
                        for k in 0..db {
                            gb[r * db + k] += gi[r * (da + db) + da + k];
                        }
                    }
                }
                Op::SumRows(a) => {
                    let len = self.nodes[*a].value.len();
                    let m = len / gi.len().max(1);
                    let ga = accumulate(&mut g[*a], len);
                    for (j, x) in ga.iter_mut().enumerate() {
                        *x += gi[j / m];
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[*a].value.len();
                    let ga = accumulate(&mut g[*a], len);
                    for x in ga.iter_mut() {
                        *x += gi[0];
                    }
                }
            }
            g[i] = Some(gi);
        }
        let params = self.params.iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Grads { nodes: g, params })
    }
}
