//! Reverse-mode differentiation over dense `(batch, channels, height, width)`
//! tensors.
//!
//! A [`Tape`] records every operation in execution order, which is already a
//! topological order, so the backward pass is a single reverse sweep. Tapes
//! are cheap and are rebuilt for every step.

mod conv;
pub mod gradcheck;
pub mod params;
mod real;

use std::sync::Arc;

use crate::error::{CtError, Result};
use crate::projector::{FilterWindow, Projector};

pub use conv::{reflect, ConvGeom};
pub use params::{ParamStore, Binding};
pub use real::{matmul, Real};

pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// A plain value: shape plus row-major data.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Shape,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(CtError::dim(format!(
                "tensor data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); numel(&shape)],
        }
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<Vec<T>>,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Var, Var),
    AvgPool2(Var),
    Upsample2(Var),
    ScaleShift(Var, T),
    MaskBlend {
        projected: Var,
        measured: Var,
        missing: Vec<bool>,
    },
    Forward(Var, Arc<Projector>),
    Fbp(Var, Arc<Projector>, FilterWindow),
    Mse(Var, Var),
    Dot(Var, Vec<T>),
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Vec<T>,
    shape: Shape,
    requires_grad: bool,
    op: Op<T>,
}

/// Gradients produced by one backward sweep, indexed by node.
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of a `requires_grad` leaf (zeros if the output does not depend on it).
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CtError::dim(msg()))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        self.nodes.push(Node {
            value,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t.data, t.shape, requires_grad, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor {
            shape: self.shape(v),
            data: self.value(v).to_vec(),
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    /// Cross-correlation with weight `(c_out, c_in, k, k)`, bias `(c_out)` and
    /// reflect padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c_in, h, wd] = self.shape(x);
        let [c_out, wc, k, k2] = self.shape(w);
        ensure(wc == c_in && k == k2, || {
            format!("conv weight {:?} does not fit input {:?}", self.shape(w), self.shape(x))
        })?;
        ensure(k % 2 == 1, || format!("conv kernel must be odd-sized, got {k}"))?;
        ensure(numel(&self.shape(b)) == c_out, || {
            format!("conv bias {:?} does not match {c_out} output channels", self.shape(b))
        })?;
        ensure(stride >= 1 && pad < h && pad < wd && h + 2 * pad >= k && wd + 2 * pad >= k, || {
            format!("conv stride {stride} / pad {pad} invalid for {h}x{wd} input")
        })?;
        let geom = ConvGeom {
            c_in,
            c_out,
            h,
            w: wd,
            k,
            stride,
            pad,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = vec![T::zero(); n * c_out * oh * ow];
        let in_len = c_in * h * wd;
        let out_len = c_out * oh * ow;
        let mut cols = Vec::with_capacity(n);
        {
            let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
            for i in 0..n {
                cols.push(geom.forward(
                    &xv[i * in_len..(i + 1) * in_len],
                    wv,
                    bv,
                    &mut out[i * out_len..(i + 1) * out_len],
                ));
            }
        }
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(out, [n, c_out, oh, ow], rg, Op::Conv { x, w, b, geom, cols }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.rg(&[x]);
        self.push(out, self.shape(x), rg, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure(self.shape(a) == self.shape(b), || {
            format!("add of {:?} and {:?}", self.shape(a), self.shape(b))
        })?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, self.shape(a), rg, Op::Add(a, b)))
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.shape(a);
        let [nb, cb, hb, wb] = self.shape(b);
        ensure(n == nb && h == hb && w == wb, || {
            format!("concat of {:?} and {:?}", self.shape(a), self.shape(b))
        })?;
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (la + lb));
        for i in 0..n {
            out.extend_from_slice(&self.value(a)[i * la..(i + 1) * la]);
            out.extend_from_slice(&self.value(b)[i * lb..(i + 1) * lb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, [n, ca + cb, h, w], rg, Op::Concat(a, b)))
    }

    /// 2×2 average pooling.
    pub fn downsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        ensure(h % 2 == 0 && w % 2 == 0, || format!("downsample2 needs even sides, got {h}x{w}"))?;
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let v = self.value(x);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for (p, o) in out.chunks_exact_mut(oh * ow).enumerate() {
            let src = &v[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let t = 2 * i * w + 2 * j;
                    o[i * ow + j] = (src[t] + src[t + 1] + src[t + w] + src[t + w + 1]) * quarter;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, [n, c, oh, ow], rg, Op::AvgPool2(x)))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let (oh, ow) = (2 * h, 2 * w);
        let v = self.value(x);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for (p, o) in out.chunks_exact_mut(oh * ow).enumerate() {
            let src = &v[p * h * w..(p + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    o[i * ow + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, [n, c, oh, ow], rg, Op::Upsample2(x))
    }

    /// `a · x + b` with constant scalars.
    pub fn scale_shift(&mut self, x: Var, a: f64, b: f64) -> Var {
        let (a, b) = (T::from_f64(a), T::from_f64(b));
        let out = self.value(x).iter().map(|&v| a * v + b).collect();
        let rg = self.rg(&[x]);
        self.push(out, self.shape(x), rg, Op::ScaleShift(x, a))
    }

    /// Row selection along the height (view) axis: rows flagged in `missing`
    /// come from `projected`, all others are copied from `measured`.
    pub fn mask_blend(&mut self, projected: Var, measured: Var, missing: &[bool]) -> Result<Var> {
        let shape = self.shape(projected);
        ensure(shape == self.shape(measured), || {
            format!("mask blend of {:?} and {:?}", shape, self.shape(measured))
        })?;
        let [_, _, h, w] = shape;
        ensure(missing.len() == h, || format!("mask has {} rows, data has {h}", missing.len()))?;
        let (pv, mv) = (self.value(projected), self.value(measured));
        let mut out = Vec::with_capacity(pv.len());
        for (r, (pr, mr)) in pv.chunks_exact(w).zip(mv.chunks_exact(w)).enumerate() {
            out.extend_from_slice(if missing[r % h] { pr } else { mr });
        }
        let rg = self.rg(&[projected, measured]);
        Ok(self.push(
            out,
            shape,
            rg,
            Op::MaskBlend {
                projected,
                measured,
                missing: missing.to_vec(),
            },
        ))
    }

    /// Forward projection of every (batch, channel) image plane.
    pub fn fp_layer(&mut self, x: Var, proj: &Arc<Projector>) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        let g = proj.geometry();
        ensure(h == g.grid_size && w == g.grid_size, || {
            format!("fp_layer input {h}x{w} does not match {0}x{0} grid", g.grid_size)
        })?;
        let out = planes_f64(self.value(x), h * w, proj.sinogram_len(), |s, d| proj.forward_raw(s, d));
        let rg = self.rg(&[x]);
        Ok(self.push(out, [n, c, g.n_views, g.n_detectors], rg, Op::Forward(x, proj.clone())))
    }

    /// Filtered backprojection of every (batch, channel) sinogram plane.
    pub fn fbp_layer(&mut self, x: Var, proj: &Arc<Projector>, window: FilterWindow) -> Result<Var> {
        let [n, c, h, w] = self.shape(x);
        let g = proj.geometry();
        ensure((h, w) == g.sinogram_shape(), || {
            format!("fbp_layer input {h}x{w} does not match geometry {:?}", g.sinogram_shape())
        })?;
        let out = planes_f64(self.value(x), h * w, proj.image_len(), |s, d| proj.fbp_raw(s, window, d));
        let rg = self.rg(&[x]);
        Ok(self.push(out, [n, c, g.grid_size, g.grid_size], rg, Op::Fbp(x, proj.clone(), window)))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure(self.shape(a) == self.shape(b), || {
            format!("mse of {:?} and {:?}", self.shape(a), self.shape(b))
        })?;
        let (av, bv) = (self.value(a), self.value(b));
        let sum: f64 = av
            .iter()
            .zip(bv)
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum();
        let out = vec![T::from_f64(sum / av.len() as f64)];
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, [1, 1, 1, 1], rg, Op::Mse(a, b)))
    }

    /// `Σ r_i x_i` against constant weights, a scalar.
    pub fn dot(&mut self, x: Var, r: Vec<T>) -> Result<Var> {
        ensure(r.len() == self.value(x).len(), || {
            format!("dot weights {} vs tensor {}", r.len(), self.value(x).len())
        })?;
        let s: f64 = self.value(x).iter().zip(&r).map(|(&a, &b)| (a * b).as_f64()).sum();
        let rg = self.rg(&[x]);
        Ok(self.push(vec![T::from_f64(s)], [1, 1, 1, 1], rg, Op::Dot(x, r)))
    }

    /// `Σ w_i s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            ensure(self.value(v).len() == 1, || format!("weighted_sum term {:?} is not scalar", self.shape(v)))?;
            s += w * self.scalar(v).as_f64();
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        let terms = terms.iter().map(|&(v, w)| (v, T::from_f64(w))).collect();
        Ok(self.push(vec![T::from_f64(s)], [1, 1, 1, 1], rg, Op::WeightedSum(terms)))
    }

    /// Gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.value(loss).len() != 1 {
            return Err(CtError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_from(&[(loss, vec![T::one()])])
    }

    /// Reverse sweep seeded with upstream gradients for arbitrary nodes.
    pub fn backward_from(&self, seeds: &[(Var, Vec<T>)]) -> Result<Grads<T>> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if v.0 >= self.nodes.len() {
                return Err(CtError::Usage(format!("node {} is not on this tape", v.0)));
            }
            if g.len() != self.value(*v).len() {
                return Err(CtError::dim(format!(
                    "seed gradient of length {} for node of shape {:?}",
                    g.len(),
                    self.shape(*v)
                )));
            }
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], g);
            }
        }
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if grads[id].is_none() {
                    grads[id] = Some(vec![T::zero(); node.value.len()]);
                }
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom, cols } => {
                let n = node.shape[0];
                let in_len = geom.c_in * geom.h * geom.w;
                let out_len = geom.c_out * geom.out_h() * geom.out_w();
                let wv = self.value(*w);
                let mut dw = vec![T::zero(); wv.len()];
                let mut db = vec![T::zero(); geom.c_out];
                let mut dx = self.nodes[x.0].requires_grad.then(|| vec![T::zero(); n * in_len]);
                for i in 0..n {
                    geom.backward(
                        &cols[i],
                        wv,
                        &g[i * out_len..(i + 1) * out_len],
                        &mut dw,
                        &mut db,
                        dx.as_mut().map(|d| &mut d[i * in_len..(i + 1) * in_len]),
                    );
                }
                if let Some(s) = self.slot(grads, *w) {
                    acc(s, &dw);
                }
                if let Some(s) = self.slot(grads, *b) {
                    acc(s, &db);
                }
                if let (Some(s), Some(dx)) = (self.slot(grads, *x), dx) {
                    acc(s, &dx);
                }
            }
            Op::Relu(x) => {
                if let Some(s) = self.slot(grads, *x) {
                    for ((d, &gi), &y) in s.iter_mut().zip(g).zip(&node.value) {
                        if y > T::zero() {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(s) = self.slot(grads, *v) {
                        acc(s, g);
                    }
                }
            }
            Op::Concat(a, b) => {
                let [n, _, h, w] = node.shape;
                let la = self.nodes[a.0].shape[1] * h * w;
                let lb = self.nodes[b.0].shape[1] * h * w;
                for i in 0..n {
                    let chunk = &g[i * (la + lb)..(i + 1) * (la + lb)];
                    if let Some(s) = self.slot(grads, *a) {
                        acc(&mut s[i * la..(i + 1) * la], &chunk[..la]);
                    }
                    if let Some(s) = self.slot(grads, *b) {
                        acc(&mut s[i * lb..(i + 1) * lb], &chunk[la..]);
                    }
                }
            }
            Op::AvgPool2(x) => {
                let [_, _, oh, ow] = node.shape;
                let w = 2 * ow;
                let quarter = T::from_f64(0.25);
                if let Some(s) = self.slot(grads, *x) {
                    for (p, gp) in g.chunks_exact(oh * ow).enumerate() {
                        let dst = &mut s[p * 4 * oh * ow..(p + 1) * 4 * oh * ow];
                        for i in 0..oh {
                            for j in 0..ow {
                                let v = gp[i * ow + j] * quarter;
                                let t = 2 * i * w + 2 * j;
                                dst[t] += v;
                                dst[t + 1] += v;
                                dst[t + w] += v;
                                dst[t + w + 1] += v;
                            }
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let [_, _, oh, ow] = node.shape;
                let (h, w) = (oh / 2, ow / 2);
                if let Some(s) = self.slot(grads, *x) {
                    for (p, gp) in g.chunks_exact(oh * ow).enumerate() {
                        let dst = &mut s[p * h * w..(p + 1) * h * w];
                        for i in 0..oh {
                            for j in 0..ow {
                                dst[(i / 2) * w + j / 2] += gp[i * ow + j];
                            }
                        }
                    }
                }
            }
            Op::ScaleShift(x, a) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(g).for_each(|(d, &gi)| *d += *a * gi);
                }
            }
            Op::MaskBlend {
                projected,
                measured,
                missing,
            } => {
                let [_, _, h, w] = node.shape;
                for (v, take_missing) in [(projected, true), (measured, false)] {
                    if let Some(s) = self.slot(grads, *v) {
                        for (r, (d, gr)) in s.chunks_exact_mut(w).zip(g.chunks_exact(w)).enumerate() {
                            if missing[r % h] == take_missing {
                                acc(d, gr);
                            }
                        }
                    }
                }
            }
            Op::Forward(x, proj) => {
                if self.nodes[x.0].requires_grad {
                    let back = planes_f64(g, proj.sinogram_len(), proj.image_len(), |s, d| {
                        proj.adjoint_raw(s, d)
                    });
                    if let Some(s) = self.slot(grads, *x) {
                        acc(s, &back);
                    }
                }
            }
            Op::Fbp(x, proj, window) => {
                if self.nodes[x.0].requires_grad {
                    let back = planes_f64(g, proj.image_len(), proj.sinogram_len(), |s, d| {
                        proj.fbp_adjoint_raw(s, *window, d)
                    });
                    if let Some(s) = self.slot(grads, *x) {
                        acc(s, &back);
                    }
                }
            }
            Op::Mse(a, b) => {
                let scale = 2.0 * g[0].as_f64() / self.value(*a).len() as f64;
                let diff: Vec<T> = self
                    .value(*a)
                    .iter()
                    .zip(self.value(*b))
                    .map(|(&x, &y)| T::from_f64(scale * (x - y).as_f64()))
                    .collect();
                if let Some(s) = self.slot(grads, *a) {
                    acc(s, &diff);
                }
                if let Some(s) = self.slot(grads, *b) {
                    s.iter_mut().zip(&diff).for_each(|(d, &v)| *d += -v);
                }
            }
            Op::Dot(x, r) => {
                if let Some(s) = self.slot(grads, *x) {
                    s.iter_mut().zip(r).for_each(|(d, &ri)| *d += ri * g[0]);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if let Some(s) = self.slot(grads, v) {
                        s[0] += w * g[0];
                    }
                }
            }
        }
    }
}

/// Apply an `f64` operator to every contiguous plane of `values`.
fn planes_f64<T: Real>(values: &[T], in_len: usize, out_len: usize, f: impl Fn(&[f64], &mut [f64])) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len() / in_len * out_len);
    let mut buf = vec![0.0; out_len];
    for plane in values.chunks_exact(in_len) {
        let src: Vec<f64> = plane.iter().map(|t| t.as_f64()).collect();
        f(&src, &mut buf);
        out.extend(buf.iter().map(|&b| T::from_f64(b)));
    }
    out
}

fn acc<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(s) => acc(s, g),
        None => *slot = Some(g.to_vec()),
    }
}
