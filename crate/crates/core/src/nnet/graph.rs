//! Reverse-mode tape over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order. Parameters are referenced by slot, which makes
//! aliased (shared) parameters accumulate into one gradient.

use rayon::prelude::*;

use super::params::NetworkParams;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf {
        grad: bool,
    },
    Param(usize),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Window {
        x: Var,
        oy: isize,
        ox: isize,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Sample {
        x: Var,
        coords: Vec<[T; 2]>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Mse(Var, Var),
    Sum(Var),
}

struct Node<T> {
    op: Op<T>,
    /// `None` for parameters, whose value lives in the parameter store.
    value: Option<Tensor<T>>,
    needs_grad: bool,
}

pub struct Graph<'p, T: Real> {
    params: Option<&'p NetworkParams<T>>,
    nodes: Vec<Node<T>>,
}

/// Gradients of one backward pass.
pub struct Gradients<T> {
    /// Indexed by parameter slot; `None` where nothing flowed.
    pub params: Vec<Option<Tensor<T>>>,
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf created with [`Graph::input_with_grad`].
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, slot: usize) -> Option<&Tensor<T>> {
        self.params.get(slot).and_then(|g| g.as_ref())
    }

    /// Parameter gradients assembled outside a graph.
    pub fn from_params(params: Vec<Option<Tensor<T>>>) -> Self {
        Gradients {
            params,
            leaves: Vec::new(),
        }
    }
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::InvalidArgument(format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl<'p, T: Real> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p NetworkParams<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(slot)) => self.params.expect("parameter node without store").tensor(*slot),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf { grad: false }, t, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::of`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Leaf { grad: true }, t, true)
    }

    /// Parameter by name; aliases resolve to their shared slot.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .params
            .ok_or_else(|| Error::InvalidArgument("graph has no parameter store".into()))?;
        let slot = store.slot(name)?;
        let needs_grad = store.is_trainable(slot);
        self.nodes.push(Node {
            op: Op::Param(slot),
            value: None,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 2D convolution of `[Ci, H, W]` by `[Co, Ci, k, k]` plus bias `[Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ci, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != ci || ws[2] != ws[3] || self.shape(b) != [ws[0]] || stride == 0 {
            return Err(shape_err("conv2d", self.shape(x), &ws));
        }
        let (co, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(shape_err("conv2d input smaller than kernel", self.shape(x), &ws));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        let mut out = vec![T::zero(); co * ho * wo];
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(o, plane)| {
            plane.iter_mut().for_each(|v| *v = bv[o]);
            for c in 0..ci {
                let xin = &xv[c * h * wd..(c + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wt = wv[((o * ci + c) * k + ky) * k + kx];
                        if wt == T::zero() {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(wo, wd, stride, kx, pad);
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * wd..];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in ox0..ox1 {
                                orow[ox] += wt * row[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        });
        let ng = self.grad_of(&[x, w, b]);
        Ok(self.push(
            Op::Conv { x, w, b, stride, pad },
            Tensor {
                shape: vec![co, ho, wo],
                data: out,
            },
            ng,
        ))
    }

    /// 2× upsampling transposed convolution, kernel 2 stride 2, weights `[Ci, Co, 2, 2]`.
    pub fn conv_transpose2x(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (ci, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[0] != ci || ws[2] != 2 || ws[3] != 2 || self.shape(b) != [ws[1]] {
            return Err(shape_err("conv_transpose2x", self.shape(x), &ws));
        }
        let co = ws[1];
        let (ho, wo) = (2 * h, 2 * wd);
        let xv = &self.value(x).data;
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        let mut out = vec![T::zero(); co * ho * wo];
        out.par_chunks_mut(ho * wo).enumerate().for_each(|(o, plane)| {
            plane.iter_mut().for_each(|v| *v = bv[o]);
            for c in 0..ci {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let wt = wv[((c * co + o) * 2 + dy) * 2 + dx];
                        for y in 0..h {
                            for xx in 0..wd {
                                plane[(2 * y + dy) * wo + 2 * xx + dx] += wt * xv[(c * h + y) * wd + xx];
                            }
                        }
                    }
                }
            }
        });
        let ng = self.grad_of(&[x, w, b]);
        Ok(self.push(
            Op::ConvT { x, w, b },
            Tensor {
                shape: vec![co, ho, wo],
                data: out,
            },
            ng,
        ))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        let ng = self.grad_of(&[x]);
        self.push(op, out, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(T::zero()))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(what, &ta.shape, &tb.shape));
        }
        let out = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(op, out, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape.is_empty() || t.shape[1..] != tail[..] {
                return Err(shape_err("concat", &t.shape, &tail));
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let ng = self.grad_of(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor { shape, data }, ng))
    }

    /// Spatial window `out[c][i][j] = x[c][i + oy][j + ox]`, zero outside `x`.
    /// Negative offsets pad, positive offsets crop.
    pub fn window(&mut self, x: Var, oy: isize, ox: isize, height: usize, width: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let xv = &self.value(x).data;
        let mut out = vec![T::zero(); c * height * width];
        for ch in 0..c {
            for i in 0..height {
                let sy = i as isize + oy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for j in 0..width {
                    let sx = j as isize + ox;
                    if sx >= 0 && sx < w as isize {
                        out[(ch * height + i) * width + j] = xv[(ch * h + sy as usize) * w + sx as usize];
                    }
                }
            }
        }
        let ng = self.grad_of(&[x]);
        Ok(self.push(
            Op::Window { x, oy, ox },
            Tensor {
                shape: vec![c, height, width],
                data: out,
            },
            ng,
        ))
    }

    /// `len` entries of the leading axis starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.shape.is_empty() || start + len > t.shape[0] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}+{len} out of shape {:?}",
                t.shape
            )));
        }
        let inner: usize = t.shape[1..].iter().product();
        let mut shape = t.shape.clone();
        shape[0] = len;
        let data = t.data[start * inner..(start + len) * inner].to_vec();
        let ng = self.grad_of(&[x]);
        Ok(self.push(Op::Slice { x, start }, Tensor { shape, data }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(shape_err("reshape", &t.shape, shape));
        }
        let out = Tensor {
            shape: shape.to_vec(),
            data: t.data.clone(),
        };
        let ng = self.grad_of(&[x]);
        Ok(self.push(Op::Reshape(x), out, ng))
    }

    /// Bilinear lookup of a `[C, H, W]` map at continuous pixel coordinates
    /// (pixel `j` centered at `j + 0.5`), zero outside the map. Returns
    /// `[N, C]`. Gradients flow to the map only.
    pub fn bilinear_sample(&mut self, x: Var, coords: &[[T; 2]]) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let xv = &self.value(x).data;
        let mut out = vec![T::zero(); coords.len() * c];
        for (n, uv) in coords.iter().enumerate() {
            for (idx, wt) in bilinear_taps(*uv, h, w) {
                for ch in 0..c {
                    out[n * c + ch] += wt * xv[ch * h * w + idx];
                }
            }
        }
        let ng = self.grad_of(&[x]);
        Ok(self.push(
            Op::Sample {
                x,
                coords: coords.to_vec(),
            },
            Tensor {
                shape: vec![coords.len(), c],
                data: out,
            },
            ng,
        ))
    }

    /// `x [N, I]`, `w [O, I]`, `b [O]` to `[N, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || self.shape(b) != [ws[0]] {
            return Err(shape_err("linear", &xs, &ws));
        }
        let (n, i, o) = (xs[0], xs[1], ws[0]);
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let mut out = vec![T::zero(); n * o];
        out.par_chunks_mut(o.max(1)).enumerate().for_each(|(r, row)| {
            let xr = &xv[r * i..(r + 1) * i];
            for (k, dst) in row.iter_mut().enumerate() {
                let wr = &wv[k * i..(k + 1) * i];
                let mut acc = bv[k];
                for q in 0..i {
                    acc += wr[q] * xr[q];
                }
                *dst = acc;
            }
        });
        let ng = self.grad_of(&[x, w, b]);
        Ok(self.push(
            Op::Linear { x, w, b },
            Tensor {
                shape: vec![n, o],
                data: out,
            },
            ng,
        ))
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape || ta.is_empty() {
            return Err(shape_err("mse", &ta.shape, &tb.shape));
        }
        let mut acc = T::zero();
        for (x, y) in ta.data.iter().zip(&tb.data) {
            acc += (*x - *y) * (*x - *y);
        }
        let v = acc / T::from_usize(ta.len());
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(Op::Mse(a, b), Tensor::scalar(v), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for v in &self.value(x).data {
            acc += *v;
        }
        let ng = self.grad_of(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(acc), ng)
    }

    /// Backpropagates `seed` from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::InvalidArgument("backward needs a scalar output".into()));
        }
        self.backward_seeded(&[(output, Tensor::from_vec(&self.shape(output).to_vec(), vec![T::one()])?)])
    }

    /// Backpropagates externally supplied output gradients, e.g. from the renderer.
    pub fn backward_seeded(&self, seeds: &[(Var, Tensor<T>)]) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape != self.shape(*v) {
                return Err(shape_err("backward seed", &g.shape, self.shape(*v)));
            }
            accumulate(&mut grads[v.0], &g.data);
        }
        let n_slots = self.params.map_or(0, |p| p.slot_count());
        let mut param_grads: Vec<Option<Tensor<T>>> = vec![None; n_slots];
        let mut leaves: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf { grad } => {
                    if *grad {
                        leaves[idx] = Some(Tensor {
                            shape: self.value(Var(idx)).shape.clone(),
                            data: g,
                        });
                    }
                }
                Op::Param(slot) => {
                    let shape = self.value(Var(idx)).shape.clone();
                    match &mut param_grads[*slot] {
                        Some(t) => t.data.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        slot_grad => *slot_grad = Some(Tensor { shape, data: g }),
                    }
                }
                op => self.backward_op(Var(idx), op, &g, &mut grads),
            }
        }
        Ok(Gradients {
            params: param_grads,
            leaves,
        })
    }

    fn backward_op(&self, out: Var, op: &Op<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let wants = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf { .. } | Op::Param(_) => unreachable!(),
            Op::Conv { x, w, b, stride, pad } => {
                let (ci, h, wd) = self.value(*x).chw().unwrap();
                let ws = self.shape(*w);
                let (co, k) = (ws[0], ws[2]);
                let (_, ho, wo) = self.value(out).chw().unwrap();
                let (s, p) = (*stride, *pad);
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                if wants(b) {
                    let gb: Vec<T> = (0..co).map(|o| sum(&g[o * ho * wo..(o + 1) * ho * wo])).collect();
                    accumulate(&mut grads[b.0], &gb);
                }
                if wants(w) {
                    let mut gw = vec![T::zero(); co * ci * k * k];
                    gw.par_chunks_mut(ci * k * k).enumerate().for_each(|(o, gwo)| {
                        let gplane = &g[o * ho * wo..(o + 1) * ho * wo];
                        for c in 0..ci {
                            let xin = &xv[c * h * wd..(c + 1) * h * wd];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let (ox0, ox1) = valid_range(wo, wd, s, kx, p);
                                    let mut acc = T::zero();
                                    for oy in 0..ho {
                                        let iy = (oy * s + ky) as isize - p as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let row = &xin[iy as usize * wd..];
                                        let grow = &gplane[oy * wo..];
                                        for ox in ox0..ox1 {
                                            acc += grow[ox] * row[ox * s + kx - p];
                                        }
                                    }
                                    gwo[(c * k + ky) * k + kx] = acc;
                                }
                            }
                        }
                    });
                    accumulate(&mut grads[w.0], &gw);
                }
                if wants(x) {
                    let mut gx = vec![T::zero(); ci * h * wd];
                    gx.par_chunks_mut(h * wd).enumerate().for_each(|(c, gxc)| {
                        for o in 0..co {
                            let gplane = &g[o * ho * wo..(o + 1) * ho * wo];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wt = wv[((o * ci + c) * k + ky) * k + kx];
                                    if wt == T::zero() {
                                        continue;
                                    }
                                    let (ox0, ox1) = valid_range(wo, wd, s, kx, p);
                                    for oy in 0..ho {
                                        let iy = (oy * s + ky) as isize - p as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let base = iy as usize * wd;
                                        for ox in ox0..ox1 {
                                            gxc[base + ox * s + kx - p] += wt * gplane[oy * wo + ox];
                                        }
                                    }
                                }
                            }
                        }
                    });
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::ConvT { x, w, b } => {
                let (ci, h, wd) = self.value(*x).chw().unwrap();
                let co = self.shape(*w)[1];
                let wo = 2 * wd;
                let plane = 4 * h * wd;
                let xv = &self.value(*x).data;
                let wv = &self.value(*w).data;
                if wants(b) {
                    let gb: Vec<T> = (0..co).map(|o| sum(&g[o * plane..(o + 1) * plane])).collect();
                    accumulate(&mut grads[b.0], &gb);
                }
                if wants(w) {
                    let mut gw = vec![T::zero(); ci * co * 4];
                    gw.par_chunks_mut(co * 4).enumerate().for_each(|(c, gwc)| {
                        for o in 0..co {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let mut acc = T::zero();
                                    for y in 0..h {
                                        for xx in 0..wd {
                                            acc += xv[(c * h + y) * wd + xx]
                                                * g[o * plane + (2 * y + dy) * wo + 2 * xx + dx];
                                        }
                                    }
                                    gwc[(o * 2 + dy) * 2 + dx] = acc;
                                }
                            }
                        }
                    });
                    accumulate(&mut grads[w.0], &gw);
                }
                if wants(x) {
                    let mut gx = vec![T::zero(); ci * h * wd];
                    gx.par_chunks_mut(h * wd).enumerate().for_each(|(c, gxc)| {
                        for o in 0..co {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let wt = wv[((c * co + o) * 2 + dy) * 2 + dx];
                                    for y in 0..h {
                                        for xx in 0..wd {
                                            gxc[y * wd + xx] += wt * g[o * plane + (2 * y + dy) * wo + 2 * xx + dx];
                                        }
                                    }
                                }
                            }
                        }
                    });
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                let gx: Vec<T> = g
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Sigmoid(x) => {
                let y = &self.value(out).data;
                let gx: Vec<T> = g.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Tanh(x) => {
                let y = &self.value(out).data;
                let gx: Vec<T> = g.iter().zip(y).map(|(&g, &t)| g * (T::one() - t * t)).collect();
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Scale(x, s) => {
                let gx: Vec<T> = g.iter().map(|&g| g * *s).collect();
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Add(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g);
                }
                if wants(b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    accumulate(&mut grads[a.0], g);
                }
                if wants(b) {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if wants(a) {
                    let ga: Vec<T> = g.iter().zip(bv).map(|(&g, &y)| g * y).collect();
                    accumulate(&mut grads[a.0], &ga);
                }
                if wants(b) {
                    let gb: Vec<T> = g.iter().zip(av).map(|(&g, &x)| g * x).collect();
                    accumulate(&mut grads[b.0], &gb);
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if wants(p) {
                        accumulate(&mut grads[p.0], &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Window { x, oy, ox } => {
                let (c, h, w) = self.value(*x).chw().unwrap();
                let (_, height, width) = self.value(out).chw().unwrap();
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..height {
                        let sy = i as isize + oy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for j in 0..width {
                            let sx = j as isize + ox;
                            if sx >= 0 && sx < w as isize {
                                gx[(ch * h + sy as usize) * w + sx as usize] += g[(ch * height + i) * width + j];
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Slice { x, start } => {
                let t = self.value(*x);
                let inner: usize = t.shape[1..].iter().product();
                let mut gx = vec![T::zero(); t.len()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Reshape(x) => accumulate(&mut grads[x.0], g),
            Op::Sample { x, coords } => {
                let (c, h, w) = self.value(*x).chw().unwrap();
                let mut gx = vec![T::zero(); c * h * w];
                for (n, uv) in coords.iter().enumerate() {
                    for (idx, wt) in bilinear_taps(*uv, h, w) {
                        for ch in 0..c {
                            gx[ch * h * w + idx] += wt * g[n * c + ch];
                        }
                    }
                }
                accumulate(&mut grads[x.0], &gx);
            }
            Op::Linear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, i) = (xs[0], xs[1]);
                let o = self.shape(*w)[0];
                let (xv, wv) = (&self.value(*x).data, &self.value(*w).data);
                if wants(b) {
                    let mut gb = vec![T::zero(); o];
                    for r in 0..n {
                        for k in 0..o {
                            gb[k] += g[r * o + k];
                        }
                    }
                    accumulate(&mut grads[b.0], &gb);
                }
                if wants(w) {
                    let mut gw = vec![T::zero(); o * i];
                    gw.par_chunks_mut(i.max(1)).enumerate().for_each(|(k, gwk)| {
                        for r in 0..n {
                            let gk = g[r * o + k];
                            let xr = &xv[r * i..(r + 1) * i];
                            for q in 0..i {
                                gwk[q] += gk * xr[q];
                            }
                        }
                    });
                    accumulate(&mut grads[w.0], &gw);
                }
                if wants(x) {
                    let mut gx = vec![T::zero(); n * i];
                    gx.par_chunks_mut(i.max(1)).enumerate().for_each(|(r, gxr)| {
                        for k in 0..o {
                            let gk = g[r * o + k];
                            let wr = &wv[k * i..(k + 1) * i];
                            for q in 0..i {
                                gxr[q] += gk * wr[q];
                            }
                        }
                    });
                    accumulate(&mut grads[x.0], &gx);
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let scale = T::from_f64(2.0) * g[0] / T::from_usize(av.len());
                let diff: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| scale * (x - y)).collect();
                if wants(a) {
                    accumulate(&mut grads[a.0], &diff);
                }
                if wants(b) {
                    let neg: Vec<T> = diff.iter().map(|&v| -v).collect();
                    accumulate(&mut grads[b.0], &neg);
                }
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; self.value(*x).len()];
                accumulate(&mut grads[x.0], &gx);
            }
        }
    }
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g.to_vec()),
    }
}

fn sum<T: Real>(v: &[T]) -> T {
    let mut acc = T::zero();
    for x in v {
        acc += *x;
    }
    acc
}

/// Output columns `[lo, hi)` whose input column `ox*s + kx - pad` is inside `[0, w)`.
fn valid_range(wo: usize, w: usize, s: usize, kx: usize, pad: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(s) };
    // largest ox with ox*s + kx - pad <= w - 1
    let hi = if w + pad < kx + 1 {
        0
    } else {
        (w - 1 + pad - kx) / s + 1
    };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

/// Flat indices and weights of the in-bounds bilinear taps.
fn bilinear_taps<T: Real>(uv: [T; 2], h: usize, w: usize) -> impl Iterator<Item = (usize, T)> {
    let fx = uv[0] - T::from_f64(0.5);
    let fy = uv[1] - T::from_f64(0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let (x0, y0) = (Real::to_f64(x0), Real::to_f64(y0));
    let finite = x0.is_finite() && y0.is_finite();
    let taps = [
        (0.0, 0.0, (T::one() - ax) * (T::one() - ay)),
        (1.0, 0.0, ax * (T::one() - ay)),
        (0.0, 1.0, (T::one() - ax) * ay),
        (1.0, 1.0, ax * ay),
    ];
    taps.into_iter().filter_map(move |(dx, dy, wt)| {
        let (x, y) = (x0 + dx, y0 + dy);
        (finite && x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64).then(|| (y as usize * w + x as usize, wt))
    })
}
