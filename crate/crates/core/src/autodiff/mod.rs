//! Reverse-mode differentiation over the fixed operation set used by the
//! pipeline: elementwise arithmetic, bilinear sampling, box-filter means,
//! pooling, crops, reductions, and scalar trigonometry.
//!
//! A [`Tape`] records primitive operations in topological (append) order;
//! [`Tape::backward`] walks the record once in reverse and produces the
//! gradient of a scalar loss with respect to every parameter leaf. Bilinear
//! sampling propagates gradients to BOTH the sampled image and the sampling
//! coordinates; the coordinate gradient is what trains depth and motion.

mod gradcheck;
mod params;

pub use gradcheck::grad_check;
pub use params::{Param, ParamSet};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Dense value on the tape: a scalar (empty shape) or an H×W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn from_grid(g: &Grid) -> Self {
        Tensor {
            shape: vec![g.height(), g.width()],
            data: g.data().to_vec(),
        }
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// View an H×W tensor as a grid.
    pub fn to_grid(&self) -> Grid {
        assert_eq!(self.shape.len(), 2, "tensor is not an H×W grid");
        Grid::from_vec(self.shape[0], self.shape[1], self.data.clone())
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Index(NodeId, usize),
    Crop {
        src: NodeId,
        x0: usize,
        y0: usize,
        h: usize,
        w: usize,
    },
    AvgPool2(NodeId),
    BoxFilter3(NodeId),
    Sample {
        img: NodeId,
        xs: NodeId,
        ys: NodeId,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by node.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }
}

/// Append-only record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bindings: Vec<(String, NodeId)>,
}

/// Bilinear interpolation cell: base corner, fractional weights, and whether
/// the unclamped coordinate was inside [0, size−1] per axis.
#[derive(Debug, Clone, Copy)]
pub struct SampleCell {
    pub x0: usize,
    pub y0: usize,
    pub wx: f64,
    pub wy: f64,
    pub in_x: bool,
    pub in_y: bool,
}

/// Snaps a coordinate within 1e-9 of an integer onto it, so geometric
/// identities (identity warp, exact round trips) sample pixels bitwise.
#[inline]
pub fn snap_coord(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Resolves clamped bilinear interpolation corners and weights for (x, y) on
/// a `width`×`height` grid.
pub fn sample_cell(width: usize, height: usize, x: f64, y: f64) -> SampleCell {
    let xs = snap_coord(x);
    let ys = snap_coord(y);
    let in_x = (0.0..=(width - 1) as f64).contains(&xs);
    let in_y = (0.0..=(height - 1) as f64).contains(&ys);
    let resolve = |v: f64, size: usize| -> (usize, f64) {
        let c = v.clamp(0.0, (size - 1) as f64);
        let mut i = c.floor() as usize;
        let mut w = c - i as f64;
        if i + 1 >= size {
            if size >= 2 {
                i = size - 2;
                w = c - i as f64; // 1.0 at the far edge
            } else {
                i = 0;
                w = 0.0;
            }
        }
        (i, w)
    };
    let (x0, wx) = resolve(xs, width);
    let (y0, wy) = resolve(ys, height);
    SampleCell {
        x0,
        y0,
        wx,
        wy,
        in_x,
        in_y,
    }
}

impl SampleCell {
    /// Interpolated value from the four corners of `g`.
    #[inline]
    pub fn interpolate(&self, g: &Grid) -> f64 {
        let x1 = (self.x0 + 1).min(g.width() - 1);
        let y1 = (self.y0 + 1).min(g.height() - 1);
        let v00 = g.get(self.x0, self.y0);
        let v01 = g.get(x1, self.y0);
        let v10 = g.get(self.x0, y1);
        let v11 = g.get(x1, y1);
        (1.0 - self.wy) * ((1.0 - self.wx) * v00 + self.wx * v01)
            + self.wy * ((1.0 - self.wx) * v10 + self.wx * v11)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Parameter leaves bound from a [`ParamSet`], in binding order.
    pub fn bindings(&self) -> &[(String, NodeId)] {
        &self.bindings
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf; receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn constant_grid(&mut self, g: &Grid) -> NodeId {
        self.constant(Tensor::from_grid(g))
    }

    /// Differentiable leaf bound to a named [`ParamSet`] entry; its gradient
    /// is accumulated into the set by [`Tape::accumulate_grads`].
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<NodeId> {
        let value = params
            .value(name)
            .ok_or_else(|| Error::Lookup(format!("unknown parameter: {name}")))?
            .clone();
        let id = self.push(value, Op::Leaf, true);
        self.bindings.push((name.to_string(), id));
        Ok(id)
    }

    /// Unbound differentiable leaf (for tests and probes).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = match (va.is_scalar(), vb.is_scalar()) {
            (true, true) => Tensor::scalar(f(va.item(), vb.item())),
            (true, false) => {
                let s = va.item();
                Tensor::from_vec(vb.shape.clone(), vb.data.iter().map(|&v| f(s, v)).collect())
            }
            (false, true) => {
                let s = vb.item();
                Tensor::from_vec(va.shape.clone(), va.data.iter().map(|&v| f(v, s)).collect())
            }
            (false, false) => {
                assert_eq!(va.shape, vb.shape, "binary op shape mismatch");
                Tensor::from_vec(
                    va.shape.clone(),
                    va.data
                        .iter()
                        .zip(vb.data.iter())
                        .map(|(&x, &y)| f(x, y))
                        .collect(),
                )
            }
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Elementwise minimum; gradient routes to the smaller input (ties to the
    /// first).
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    /// Elementwise maximum; gradient routes to the larger input (ties to the
    /// first).
    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(a, b, Op::Max(a, b), |x, y| if x >= y { x } else { y })
    }

    /// a + c for a constant.
    pub fn adds(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant_scalar(c);
        self.add(a, k)
    }

    /// a · c for a constant.
    pub fn muls(&mut self, a: NodeId, c: f64) -> NodeId {
        let k = self.constant_scalar(c);
        self.mul(a, k)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let value = Tensor::from_vec(va.shape.clone(), va.data.iter().map(|&v| f(v)).collect());
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Neg(a), |v| -v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    /// |x|; subgradient at 0 is 0.
    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// max(x, c); gradient passes only where x > c.
    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::ClampMin(a, c), |v| v.max(c))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.data.iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(v), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        let v = t.data.iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(v), Op::Mean(a), needs)
    }

    /// Scalar extraction by flat index.
    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.nodes[a.0].value.data[i];
        let needs = self.needs(a);
        self.push(Tensor::scalar(v), Op::Index(a, i), needs)
    }

    /// Rectangular crop of an H×W tensor.
    pub fn crop(&mut self, src: NodeId, x0: usize, y0: usize, h: usize, w: usize) -> NodeId {
        let t = &self.nodes[src.0].value;
        assert_eq!(t.shape.len(), 2);
        let (sh, sw) = (t.shape[0], t.shape[1]);
        assert!(y0 + h <= sh && x0 + w <= sw, "crop out of range");
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            let row = (y0 + y) * sw + x0;
            data.extend_from_slice(&t.data[row..row + w]);
        }
        let needs = self.needs(src);
        self.push(
            Tensor::from_vec(vec![h, w], data),
            Op::Crop { src, x0, y0, h, w },
            needs,
        )
    }

    /// 2×2 average pooling of an H×W tensor (odd last row/column truncated;
    /// truncated cells receive zero gradient).
    pub fn avg_pool2(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.shape.len(), 2);
        let (sh, sw) = (t.shape[0], t.shape[1]);
        let (oh, ow) = (sh / 2, sw / 2);
        let mut data = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let i = 2 * y * sw + 2 * x;
                data.push((t.data[i] + t.data[i + 1] + t.data[i + sw] + t.data[i + sw + 1]) * 0.25);
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(vec![oh, ow], data), Op::AvgPool2(a), needs)
    }

    /// 3×3 box-filter mean with valid extent: (H−2)×(W−2).
    pub fn box_filter3(&mut self, a: NodeId) -> NodeId {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.shape.len(), 2);
        let (sh, sw) = (t.shape[0], t.shape[1]);
        assert!(sh >= 3 && sw >= 3, "box_filter3 needs at least 3x3 input");
        let (oh, ow) = (sh - 2, sw - 2);
        let mut data = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for dy in 0..3 {
                    let row = (y + dy) * sw + x;
                    s += t.data[row] + t.data[row + 1] + t.data[row + 2];
                }
                data.push(s / 9.0);
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(vec![oh, ow], data), Op::BoxFilter3(a), needs)
    }

    /// Bilinear sampling of `img` (H×W) at per-pixel coordinates `xs`, `ys`
    /// (any matching shape). Values are clamp-to-edge; gradients flow to the
    /// image and, where the coordinate lies inside the image rectangle, to
    /// the coordinates.
    pub fn sample(&mut self, img: NodeId, xs: NodeId, ys: NodeId) -> NodeId {
        let vi = &self.nodes[img.0].value;
        let vx = &self.nodes[xs.0].value;
        let vy = &self.nodes[ys.0].value;
        assert_eq!(vi.shape.len(), 2, "sample image must be H×W");
        assert_eq!(vx.shape, vy.shape, "sample coordinate shapes differ");
        let (ih, iw) = (vi.shape[0], vi.shape[1]);
        let g = vi.clone();
        let grid = Grid::from_vec(ih, iw, g.data);
        let mut data = Vec::with_capacity(vx.len());
        for i in 0..vx.len() {
            let cell = sample_cell(iw, ih, vx.data[i], vy.data[i]);
            data.push(cell.interpolate(&grid));
        }
        let needs = self.needs(img) || self.needs(xs) || self.needs(ys);
        self.push(
            Tensor::from_vec(vx.shape.clone(), data),
            Op::Sample { img, xs, ys },
            needs,
        )
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// nodes that do not influence the loss (or need no gradient) hold none.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::ContractViolation(
                "backward requires a scalar loss node".into(),
            ));
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { slots });
        }
        slots[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = slots[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut slots);
            slots[i] = Some(g);
        }
        Ok(Gradients { slots })
    }

    /// Adds this tape's parameter-leaf gradients into the set's grad slots.
    pub fn accumulate_grads(&self, grads: &Gradients, params: &mut ParamSet) -> Result<()> {
        for (name, id) in &self.bindings {
            if let Some(g) = grads.get(*id) {
                params.add_to_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, slots: &mut [Option<Tensor>]) {
        // Adds `contrib(j)` (already multiplied by the upstream gradient) into
        // the slot of input `id`, reducing over the broadcast if the input is
        // scalar and the output was not.
        let acc = |slots: &mut [Option<Tensor>],
                   id: NodeId,
                   shape: &[usize],
                   contrib: &mut dyn FnMut(usize) -> f64,
                   len: usize| {
            let nodes_needs = self.nodes[id.0].needs_grad;
            if !nodes_needs {
                return;
            }
            let slot = &mut slots[id.0];
            if slot.is_none() {
                *slot = Some(Tensor::from_vec(
                    shape.to_vec(),
                    vec![0.0; shape.iter().product::<usize>().max(1)],
                ));
            }
            let t = slot.as_mut().unwrap();
            if t.is_scalar() && len > 1 {
                let mut s = 0.0;
                for j in 0..len {
                    s += contrib(j);
                }
                t.data[0] += s;
            } else {
                for j in 0..len {
                    t.data[j] += contrib(j);
                }
            }
        };
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        // Broadcast-aware element access for binary inputs.
        let at = |t: &Tensor, j: usize| -> f64 {
            if t.is_scalar() {
                t.data[0]
            } else {
                t.data[j]
            }
        };
        let out_len = self.nodes[i].value.len();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(slots, *a, val(*a).shape(), &mut |j| at(g, j), out_len);
                acc(slots, *b, val(*b).shape(), &mut |j| at(g, j), out_len);
            }
            Op::Sub(a, b) => {
                acc(slots, *a, val(*a).shape(), &mut |j| at(g, j), out_len);
                acc(slots, *b, val(*b).shape(), &mut |j| -at(g, j), out_len);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(slots, *a, va.shape(), &mut |j| at(g, j) * at(vb, j), out_len);
                acc(slots, *b, vb.shape(), &mut |j| at(g, j) * at(va, j), out_len);
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(slots, *a, va.shape(), &mut |j| at(g, j) / at(vb, j), out_len);
                acc(
                    slots,
                    *b,
                    vb.shape(),
                    &mut |j| {
                        let d = at(vb, j);
                        -at(g, j) * at(va, j) / (d * d)
                    },
                    out_len,
                );
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| if at(va, j) <= at(vb, j) { at(g, j) } else { 0.0 },
                    out_len,
                );
                acc(
                    slots,
                    *b,
                    vb.shape(),
                    &mut |j| if at(va, j) <= at(vb, j) { 0.0 } else { at(g, j) },
                    out_len,
                );
            }
            Op::Max(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| if at(va, j) >= at(vb, j) { at(g, j) } else { 0.0 },
                    out_len,
                );
                acc(
                    slots,
                    *b,
                    vb.shape(),
                    &mut |j| if at(va, j) >= at(vb, j) { 0.0 } else { at(g, j) },
                    out_len,
                );
            }
            Op::Neg(a) => acc(slots, *a, val(*a).shape(), &mut |j| -g.data[j], out_len),
            Op::Exp(a) => {
                let out = &self.nodes[i].value;
                acc(
                    slots,
                    *a,
                    val(*a).shape(),
                    &mut |j| g.data[j] * out.data[j],
                    out_len,
                );
            }
            Op::Ln(a) => {
                let va = val(*a);
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| g.data[j] / va.data[j],
                    out_len,
                );
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                acc(
                    slots,
                    *a,
                    val(*a).shape(),
                    &mut |j| g.data[j] / (2.0 * out.data[j]),
                    out_len,
                );
            }
            Op::Abs(a) => {
                let va = val(*a);
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| {
                        let x = va.data[j];
                        if x > 0.0 {
                            g.data[j]
                        } else if x < 0.0 {
                            -g.data[j]
                        } else {
                            0.0
                        }
                    },
                    out_len,
                );
            }
            Op::Sin(a) => {
                let va = val(*a);
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| g.data[j] * va.data[j].cos(),
                    out_len,
                );
            }
            Op::Cos(a) => {
                let va = val(*a);
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| -g.data[j] * va.data[j].sin(),
                    out_len,
                );
            }
            Op::ClampMin(a, c) => {
                let va = val(*a);
                let c = *c;
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| if va.data[j] > c { g.data[j] } else { 0.0 },
                    out_len,
                );
            }
            Op::Sum(a) => {
                let va = val(*a);
                let gv = g.item();
                acc(slots, *a, va.shape(), &mut |_| gv, va.len());
            }
            Op::Mean(a) => {
                let va = val(*a);
                let gv = g.item() / va.len() as f64;
                acc(slots, *a, va.shape(), &mut |_| gv, va.len());
            }
            Op::Index(a, idx) => {
                let va = val(*a);
                let gv = g.item();
                let idx = *idx;
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| if j == idx { gv } else { 0.0 },
                    va.len(),
                );
            }
            Op::Crop { src, x0, y0, h, w } => {
                let vs = val(*src);
                let sw = vs.shape()[1];
                let (x0, y0, h, w) = (*x0, *y0, *h, *w);
                acc(
                    slots,
                    *src,
                    vs.shape(),
                    &mut |j| {
                        let (sy, sx) = (j / sw, j % sw);
                        if sy >= y0 && sy < y0 + h && sx >= x0 && sx < x0 + w {
                            g.data[(sy - y0) * w + (sx - x0)]
                        } else {
                            0.0
                        }
                    },
                    vs.len(),
                );
            }
            Op::AvgPool2(a) => {
                let va = val(*a);
                let (sw, ow) = (va.shape()[1], self.nodes[i].value.shape()[1]);
                let (oh_full, ow_full) = (
                    self.nodes[i].value.shape()[0],
                    self.nodes[i].value.shape()[1],
                );
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| {
                        let (sy, sx) = (j / sw, j % sw);
                        let (oy, ox) = (sy / 2, sx / 2);
                        if oy < oh_full && ox < ow_full {
                            g.data[oy * ow + ox] * 0.25
                        } else {
                            0.0
                        }
                    },
                    va.len(),
                );
            }
            Op::BoxFilter3(a) => {
                let va = val(*a);
                let (sh, sw) = (va.shape()[0], va.shape()[1]);
                let (oh, ow) = (sh - 2, sw - 2);
                acc(
                    slots,
                    *a,
                    va.shape(),
                    &mut |j| {
                        let (sy, sx) = (j / sw, j % sw);
                        // Windows whose 3x3 support covers (sy, sx).
                        let mut s = 0.0;
                        let ylo = sy.saturating_sub(2);
                        let xlo = sx.saturating_sub(2);
                        for oy in ylo..=sy.min(oh.saturating_sub(1)) {
                            for ox in xlo..=sx.min(ow.saturating_sub(1)) {
                                s += g.data[oy * ow + ox];
                            }
                        }
                        s / 9.0
                    },
                    va.len(),
                );
            }
            Op::Sample { img, xs, ys } => {
                let vi = val(*img);
                let vx = val(*xs);
                let vy = val(*ys);
                let (ih, iw) = (vi.shape()[0], vi.shape()[1]);
                let grid = Grid::from_vec(ih, iw, vi.data().to_vec());
                // Image gradient: scatter the four corner weights.
                if self.nodes[img.0].needs_grad {
                    let mut gi = vec![0.0; vi.len()];
                    for j in 0..vx.len() {
                        let c = sample_cell(iw, ih, vx.data[j], vy.data[j]);
                        let x1 = (c.x0 + 1).min(iw - 1);
                        let y1 = (c.y0 + 1).min(ih - 1);
                        let gj = g.data[j];
                        gi[c.y0 * iw + c.x0] += gj * (1.0 - c.wx) * (1.0 - c.wy);
                        gi[c.y0 * iw + x1] += gj * c.wx * (1.0 - c.wy);
                        gi[y1 * iw + c.x0] += gj * (1.0 - c.wx) * c.wy;
                        gi[y1 * iw + x1] += gj * c.wx * c.wy;
                    }
                    acc(slots, *img, vi.shape(), &mut |j| gi[j], vi.len());
                }
                // Coordinate gradients: spatial derivative of the
                // interpolant, zero where the coordinate was clamped.
                if self.nodes[xs.0].needs_grad || self.nodes[ys.0].needs_grad {
                    let corner = |x: usize, y: usize| grid.get(x.min(iw - 1), y.min(ih - 1));
                    if self.nodes[xs.0].needs_grad {
                        acc(
                            slots,
                            *xs,
                            vx.shape(),
                            &mut |j| {
                                let c = sample_cell(iw, ih, vx.data[j], vy.data[j]);
                                if !c.in_x {
                                    return 0.0;
                                }
                                let v00 = corner(c.x0, c.y0);
                                let v01 = corner(c.x0 + 1, c.y0);
                                let v10 = corner(c.x0, c.y0 + 1);
                                let v11 = corner(c.x0 + 1, c.y0 + 1);
                                g.data[j] * ((1.0 - c.wy) * (v01 - v00) + c.wy * (v11 - v10))
                            },
                            vx.len(),
                        );
                    }
                    if self.nodes[ys.0].needs_grad {
                        acc(
                            slots,
                            *ys,
                            vy.shape(),
                            &mut |j| {
                                let c = sample_cell(iw, ih, vx.data[j], vy.data[j]);
                                if !c.in_y {
                                    return 0.0;
                                }
                                let v00 = corner(c.x0, c.y0);
                                let v01 = corner(c.x0 + 1, c.y0);
                                let v10 = corner(c.x0, c.y0 + 1);
                                let v11 = corner(c.x0 + 1, c.y0 + 1);
                                g.data[j] * ((1.0 - c.wx) * (v10 - v00) + c.wx * (v11 - v01))
                            },
                            vy.len(),
                        );
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // loss = x^2 at x = 3 -> gradient 6
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = tape.mul(x, x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let g = Grid::from_fn(3, 4, |x, y| (x + y) as f64);
        let f = tape.leaf(Tensor::from_grid(&g));
        let loss = tape.sum(f);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(f).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_gets_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant_scalar(5.0);
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(c, x);
        let grads = tape.backward(y).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().item(), 5.0);
    }

    #[test]
    fn non_scalar_loss_is_contract_violation() {
        let mut tape = Tape::new();
        let g = Grid::new(2, 2, 1.0);
        let f = tape.leaf(Tensor::from_grid(&g));
        assert!(matches!(
            tape.backward(f),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn broadcast_scalar_times_grid() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(2.0));
        let g = tape.constant_grid(&Grid::from_vec(1, 3, vec![1.0, 2.0, 3.0]));
        let prod = tape.mul(s, g);
        let loss = tape.sum(prod);
        assert_eq!(tape.value(loss).item(), 12.0);
        let grads = tape.backward(loss).unwrap();
        // d(sum(s*g))/ds = sum(g) = 6
        assert_eq!(grads.get(s).unwrap().item(), 6.0);
    }

    #[test]
    fn div_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(6.0));
        let b = tape.leaf(Tensor::scalar(2.0));
        let q = tape.div(a, b);
        let grads = tape.backward(q).unwrap();
        assert_eq!(grads.get(a).unwrap().item(), 0.5);
        assert_eq!(grads.get(b).unwrap().item(), -1.5);
    }

    #[test]
    fn min_routes_gradient_to_smaller() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_vec(vec![1, 2], vec![1.0, 5.0]));
        let b = tape.leaf(Tensor::from_vec(vec![1, 2], vec![3.0, 2.0]));
        let m = tape.min(a, b);
        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn mean_and_crop_adjoints() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_grid(&Grid::from_fn(3, 3, |x, y| {
            (y * 3 + x) as f64
        })));
        let c = tape.crop(a, 1, 0, 2, 2);
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 4.0, 5.0]);
        let loss = tape.mean(c);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(a).unwrap();
        assert_eq!(
            g.data(),
            &[0.0, 0.25, 0.25, 0.0, 0.25, 0.25, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn box_filter3_matches_window_mean_and_adjoint_sums() {
        let mut tape = Tape::new();
        let g = Grid::from_fn(4, 4, |x, y| (y * 4 + x) as f64);
        let a = tape.leaf(Tensor::from_grid(&g));
        let f = tape.box_filter3(a);
        // center of first window = mean of rows {0,1,2} x cols {0,1,2}
        let mut expect = 0.0;
        for y in 0..3 {
            for x in 0..3 {
                expect += g.get(x, y);
            }
        }
        expect /= 9.0;
        assert!((tape.value(f).data()[0] - expect).abs() < 1e-12);
        let loss = tape.sum(f);
        let grads = tape.backward(loss).unwrap();
        // Every input cell's gradient = (#windows covering it) / 9; sums to 4.
        let total: f64 = grads.get(a).unwrap().data().iter().sum();
        assert!((total - 4.0).abs() < 1e-12);
    }

    #[test]
    fn sample_at_integer_coords_is_exact() {
        let mut tape = Tape::new();
        let img = tape.constant_grid(&Grid::from_fn(3, 3, |x, y| 0.1 * (y * 3 + x) as f64));
        let xs = tape.constant_grid(&Grid::from_vec(1, 2, vec![1.0, 2.0]));
        let ys = tape.constant_grid(&Grid::from_vec(1, 2, vec![0.0, 2.0]));
        let s = tape.sample(img, xs, ys);
        assert_eq!(tape.value(s).data(), &[0.1, 0.8]);
    }

    #[test]
    fn sample_midpoint_interpolates() {
        let mut tape = Tape::new();
        let img = tape.constant_grid(&Grid::from_vec(1, 2, vec![0.0, 1.0]));
        let xs = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.5]));
        let ys = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.0]));
        let s = tape.sample(img, xs, ys);
        assert_eq!(tape.value(s).data(), &[0.5]);
    }

    #[test]
    fn sample_coordinate_gradient_flows() {
        // image row [0, 1]: d(sample)/dx = 1 between the pixels
        let mut tape = Tape::new();
        let img = tape.constant_grid(&Grid::from_vec(1, 2, vec![0.0, 1.0]));
        let xs = tape.leaf(Tensor::from_vec(vec![1, 1], vec![0.3]));
        let ys = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.0]));
        let s = tape.sample(img, xs, ys);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(xs).unwrap().data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_image_gradient_scatters_weights() {
        let mut tape = Tape::new();
        let img = tape.leaf(Tensor::from_grid(&Grid::new(2, 2, 0.5)));
        let xs = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.25]));
        let ys = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.75]));
        let s = tape.sample(img, xs, ys);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(img).unwrap();
        let expect = [
            0.75 * 0.25, // (0,0): (1-wx)(1-wy)
            0.25 * 0.25, // (1,0)
            0.75 * 0.75, // (0,1)
            0.25 * 0.75, // (1,1)
        ];
        for (a, e) in g.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!((g.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_clamped_coordinate_gets_zero_gradient() {
        let mut tape = Tape::new();
        let img = tape.constant_grid(&Grid::from_vec(1, 2, vec![0.0, 1.0]));
        let xs = tape.leaf(Tensor::from_vec(vec![1, 1], vec![5.0]));
        let ys = tape.constant_grid(&Grid::from_vec(1, 1, vec![0.0]));
        let s = tape.sample(img, xs, ys);
        assert_eq!(tape.value(s).data(), &[1.0]); // clamp-to-edge value
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(xs).unwrap().data(), &[0.0]);
    }

    #[test]
    fn gradient_linearity() {
        // grad(a·f + b·g) = a·grad(f) + b·grad(g)
        let run = |wa: f64, wb: f64| -> (f64, f64) {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(1.7));
            let f = tape.mul(x, x); // x^2
            let e = tape.exp(x); // e^x
            let fa = tape.muls(f, wa);
            let eb = tape.muls(e, wb);
            let loss = tape.add(fa, eb);
            let grads = tape.backward(loss).unwrap();
            (grads.get(x).unwrap().item(), tape.value(loss).item())
        };
        let (gf, _) = run(1.0, 0.0);
        let (gg, _) = run(0.0, 1.0);
        let (gsum, _) = run(2.5, -0.75);
        assert!((gsum - (2.5 * gf - 0.75 * gg)).abs() < 1e-10);
    }

    #[test]
    fn snap_rounds_near_integers_only() {
        assert_eq!(snap_coord(2.0 + 1e-12), 2.0);
        assert_eq!(snap_coord(2.0 - 1e-12), 2.0);
        let v = 2.3;
        assert_eq!(snap_coord(v), v);
    }
}
