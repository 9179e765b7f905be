//! Reverse-mode differentiation over a recorded tape of tensor ops.
//!
//! Parameters live outside the tape in a [`ParamStore`]; ops reference them
//! by index and [`Graph::backward`] accumulates their gradients into a
//! [`Gradients`] buffer aligned with the store.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type NodeId = usize;
pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        self.params.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients(self.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }
}

/// Gradient buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv {
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
        kernel: usize,
    },
    Silu(NodeId),
    Sigmoid(NodeId),
    AvgPool(NodeId),
    Upsample(NodeId),
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    GlobalAvg(NodeId),
    ScaleChannels { x: NodeId, s: NodeId },
    ScaleSpatial { x: NodeId, a: NodeId },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    dims: [usize; 3],
    kernel: usize,
}

/// Zero-padded layout used by the convolution kernels. With a halo of
/// `r = kernel / 2` on every side, each kernel tap becomes a constant offset
/// in the flattened padded slab, so a tap is a contiguous multiply-add over
/// the padded index range of the interior. Positions in that range that fall
/// on the halo produce garbage that is never read back.
struct Padded {
    dims: [usize; 3],
    r: usize,
    px: usize,
    py: usize,
    len: usize,
    start: usize,
    end: usize,
    offsets: Vec<isize>,
}

impl Padded {
    fn new(dims: [usize; 3], kernel: usize) -> Self {
        let r = kernel / 2;
        let [nx, ny, nz] = dims;
        let (px, py, pz) = (nx + 2 * r, ny + 2 * r, nz + 2 * r);
        let idx = |x: usize, y: usize, z: usize| (z * py + y) * px + x;
        let mut offsets = Vec::with_capacity(kernel * kernel * kernel);
        for kz in 0..kernel {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let (dz, dy, dx) = (kz as isize - r as isize, ky as isize - r as isize, kx as isize - r as isize);
                    offsets.push((dz * py as isize + dy) * px as isize + dx);
                }
            }
        }
        Padded {
            dims,
            r,
            px,
            py,
            len: px * py * pz,
            start: idx(r, r, r),
            end: idx(nx - 1 + r, ny - 1 + r, nz - 1 + r) + 1,
            offsets,
        }
    }

    fn pad(&self, slab: &[f64], out: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        for z in 0..nz {
            for y in 0..ny {
                let dst = ((z + self.r) * self.py + y + self.r) * self.px + self.r;
                out[dst..dst + nx].copy_from_slice(&slab[(z * ny + y) * nx..(z * ny + y + 1) * nx]);
            }
        }
    }

    fn unpad_add(&self, padded: &[f64], slab: &mut [f64]) {
        let [nx, ny, nz] = self.dims;
        for z in 0..nz {
            for y in 0..ny {
                let src = ((z + self.r) * self.py + y + self.r) * self.px + self.r;
                let row = &mut slab[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                for (d, v) in row.iter_mut().zip(&padded[src..src + nx]) {
                    *d += v;
                }
            }
        }
    }

    fn pad_all(&self, t: &Tensor, b: usize) -> Vec<f64> {
        let c = t.channels();
        let mut out = vec![0.0; c * self.len];
        for ci in 0..c {
            self.pad(t.slab(b, ci), &mut out[ci * self.len..(ci + 1) * self.len]);
        }
        out
    }
}

const LANES: usize = 4;
/// Output channels accumulated together so each source load is reused.
const GROUP: usize = 4;

/// `out[o][i] += Σ_c Σ_t w(o, c)[t] · src[c][i + offsets[t]]` for `i` in
/// `[start, end)`, where every channel occupies `len` values.
fn correlate<'w>(
    src: &[f64],
    n_src: usize,
    out: &mut [f64],
    n_out: usize,
    pad: &Padded,
    offsets: &[isize],
    w: impl Fn(usize, usize) -> &'w [f64],
) {
    let len = pad.len;
    let mut o0 = 0;
    while o0 < n_out {
        let g = GROUP.min(n_out - o0);
        if g == GROUP {
            correlate_group(src, n_src, &mut out[o0 * len..(o0 + GROUP) * len], o0, pad, offsets, &w);
        } else {
            for o in o0..o0 + g {
                correlate_one(src, n_src, &mut out[o * len..(o + 1) * len], o, pad, offsets, &w);
            }
        }
        o0 += g;
    }
}

fn correlate_group<'w>(
    src: &[f64],
    n_src: usize,
    out: &mut [f64],
    o0: usize,
    pad: &Padded,
    offsets: &[isize],
    w: &impl Fn(usize, usize) -> &'w [f64],
) {
    let len = pad.len;
    let taps = offsets.len();
    let mut wbuf = vec![[0.0; GROUP]; taps];
    for c in 0..n_src {
        for (k, row) in wbuf.iter_mut().enumerate() {
            for (q, v) in row.iter_mut().enumerate() {
                *v = w(o0 + q, c)[k];
            }
        }
        let s = &src[c * len..(c + 1) * len];
        let mut i = pad.start;
        while i + LANES <= pad.end {
            let mut acc = [[0.0; LANES]; GROUP];
            for (q, a) in acc.iter_mut().enumerate() {
                a.copy_from_slice(&out[q * len + i..q * len + i + LANES]);
            }
            for (wv, &off) in wbuf.iter().zip(offsets) {
                let base = (i as isize + off) as usize;
                let sv: &[f64; LANES] = s[base..base + LANES].try_into().expect("lane chunk");
                for q in 0..GROUP {
                    for j in 0..LANES {
                        acc[q][j] += wv[q] * sv[j];
                    }
                }
            }
            for (q, a) in acc.iter().enumerate() {
                out[q * len + i..q * len + i + LANES].copy_from_slice(a);
            }
            i += LANES;
        }
        for i in i..pad.end {
            for q in 0..GROUP {
                let mut a = out[q * len + i];
                for (wv, &off) in wbuf.iter().zip(offsets) {
                    a += wv[q] * s[(i as isize + off) as usize];
                }
                out[q * len + i] = a;
            }
        }
    }
}

fn correlate_one<'w>(
    src: &[f64],
    n_src: usize,
    dst: &mut [f64],
    o: usize,
    pad: &Padded,
    offsets: &[isize],
    w: &impl Fn(usize, usize) -> &'w [f64],
) {
    let len = pad.len;
    for c in 0..n_src {
        let wt = w(o, c);
        let s = &src[c * len..(c + 1) * len];
        for i in pad.start..pad.end {
            let mut a = dst[i];
            for (&wv, &off) in wt.iter().zip(offsets) {
                a += wv * s[(i as isize + off) as usize];
            }
            dst[i] = a;
        }
    }
}

fn conv_forward(input: &Tensor, weight: &[f64], bias: Option<&[f64]>, geom: &ConvGeom) -> Tensor {
    let pad = Padded::new(geom.dims, geom.kernel);
    let taps = pad.offsets.len();
    let s = input.spatial_len();
    let mut out = vec![0.0; geom.batch * geom.cout * s];
    let mut acc = vec![0.0; geom.cout * pad.len];
    for b in 0..geom.batch {
        let inp = pad.pad_all(input, b);
        acc.fill(0.0);
        correlate(&inp, geom.cin, &mut acc, geom.cout, &pad, &pad.offsets, |co, ci| {
            &weight[(co * geom.cin + ci) * taps..(co * geom.cin + ci + 1) * taps]
        });
        for co in 0..geom.cout {
            let dst = &mut out[(b * geom.cout + co) * s..(b * geom.cout + co + 1) * s];
            if let Some(bias) = bias {
                dst.fill(bias[co]);
            }
            pad.unpad_add(&acc[co * pad.len..(co + 1) * pad.len], dst);
        }
    }
    Tensor::from_raw([geom.batch, geom.cout, geom.dims[0], geom.dims[1], geom.dims[2]], out)
}

/// `grad_w[co, ci, t] += Σ_i g[co][i] · src[ci][i + offsets[t]]`, with
/// output channels taken `GROUP` at a time so each source load is shared.
fn weight_gradient(src: &[f64], g: &[f64], geom: &ConvGeom, pad: &Padded, grad_w: &mut [f64]) {
    let len = pad.len;
    let taps = pad.offsets.len();
    let n = pad.end - pad.start;
    let mut co0 = 0;
    while co0 < geom.cout {
        let group = GROUP.min(geom.cout - co0);
        for ci in 0..geom.cin {
            let s = &src[ci * len..(ci + 1) * len];
            for (t, &off) in pad.offsets.iter().enumerate() {
                let from = (pad.start as isize + off) as usize;
                let sv = &s[from..from + n];
                if group == GROUP {
                    let gs: [&[f64]; GROUP] =
                        std::array::from_fn(|q| &g[(co0 + q) * len + pad.start..(co0 + q) * len + pad.end]);
                    let mut acc = [[0.0; LANES]; GROUP];
                    let chunks = n / LANES;
                    for k in 0..chunks {
                        let x: &[f64; LANES] = sv[k * LANES..(k + 1) * LANES].try_into().expect("lane chunk");
                        for q in 0..GROUP {
                            let y: &[f64; LANES] = gs[q][k * LANES..(k + 1) * LANES].try_into().expect("lane chunk");
                            for j in 0..LANES {
                                acc[q][j] += x[j] * y[j];
                            }
                        }
                    }
                    for q in 0..GROUP {
                        let mut total = (acc[q][0] + acc[q][1]) + (acc[q][2] + acc[q][3]);
                        for i in chunks * LANES..n {
                            total += sv[i] * gs[q][i];
                        }
                        grad_w[((co0 + q) * geom.cin + ci) * taps + t] += total;
                    }
                } else {
                    for q in 0..group {
                        let gs = &g[(co0 + q) * len + pad.start..(co0 + q) * len + pad.end];
                        grad_w[((co0 + q) * geom.cin + ci) * taps + t] += dot(gs, sv);
                    }
                }
            }
        }
        co0 += group;
    }
}

fn conv_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    geom: &ConvGeom,
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    need_input: bool,
) -> Option<Tensor> {
    let pad = Padded::new(geom.dims, geom.kernel);
    let taps = pad.offsets.len();
    if let Some(gb) = grad_b {
        for b in 0..geom.batch {
            for (co, g) in gb.iter_mut().enumerate() {
                *g += grad_out.slab(b, co).iter().sum::<f64>();
            }
        }
    }
    // The input gradient is a correlation of the output gradient with the
    // same taps at negated offsets.
    let back: Vec<isize> = pad.offsets.iter().map(|o| -o).collect();
    let mut grad_in = need_input.then(|| vec![0.0; input.len()]);
    let s = input.spatial_len();
    let mut gin_pad = vec![0.0; if need_input { geom.cin * pad.len } else { 0 }];
    for b in 0..geom.batch {
        let inp = pad.pad_all(input, b);
        // Halo positions of the padded gradient are zero, so garbage outputs
        // computed there contribute nothing.
        let g = pad.pad_all(grad_out, b);
        weight_gradient(&inp, &g, geom, &pad, grad_w);
        if let Some(gi) = grad_in.as_mut() {
            gin_pad.fill(0.0);
            correlate(&g, geom.cout, &mut gin_pad, geom.cin, &pad, &back, |ci, co| {
                &weight[(co * geom.cin + ci) * taps..(co * geom.cin + ci + 1) * taps]
            });
            for ci in 0..geom.cin {
                pad.unpad_add(
                    &gin_pad[ci * pad.len..(ci + 1) * pad.len],
                    &mut gi[(b * geom.cin + ci) * s..(b * geom.cin + ci + 1) * s],
                );
            }
        }
    }
    grad_in.map(|d| Tensor::from_raw(input.shape(), d))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Same-padded convolution with a cubic kernel of odd size. Weight
    /// layout: `[out, in, kz, ky, kx]`.
    pub fn conv(
        &mut self,
        params: &ParamStore,
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
    ) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        let w = params.get(weight);
        let [cout, cin, kernel, _, _] = match w.shape.as_slice() {
            &[a, b, c, d, e] if c == d && d == e && c % 2 == 1 => [a, b, c, d, e],
            _ => return Err(Error::Shape(format!("bad conv weight shape {:?}", w.shape))),
        };
        if x.channels() != cin {
            return Err(Error::Shape(format!(
                "conv {} expects {cin} input channels, got {}",
                w.name,
                x.channels()
            )));
        }
        let geom = ConvGeom {
            batch: x.batch(),
            cin,
            cout,
            dims: x.spatial(),
            kernel,
        };
        let out = conv_forward(x, &w.data, bias.map(|b| params.get(b).data.as_slice()), &geom);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                kernel,
            },
        ))
    }

    pub fn silu(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let out = x.data().iter().map(|&v| v * sigmoid(v)).collect();
        let t = Tensor::from_raw(x.shape(), out);
        self.push(t, Op::Silu(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let t = Tensor::from_raw(x.shape(), x.data().iter().map(|&v| sigmoid(v)).collect());
        self.push(t, Op::Sigmoid(input))
    }

    /// 2×2×2 average pooling.
    pub fn avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        let [b, c, nx, ny, nz] = x.shape();
        if nx % 2 != 0 || ny % 2 != 0 || nz % 2 != 0 {
            return Err(Error::Shape(format!("cannot pool odd spatial dims {:?}", x.spatial())));
        }
        let (ox, oy, oz) = (nx / 2, ny / 2, nz / 2);
        let mut out = vec![0.0; b * c * ox * oy * oz];
        for (slab_i, o) in out.chunks_exact_mut(ox * oy * oz).enumerate() {
            let inp = &x.data()[slab_i * nx * ny * nz..(slab_i + 1) * nx * ny * nz];
            for z in 0..nz {
                for y in 0..ny {
                    let row = &inp[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                    let orow = &mut o[((z / 2) * oy + y / 2) * ox..((z / 2) * oy + y / 2 + 1) * ox];
                    for (xo, v) in orow.iter_mut().enumerate() {
                        *v += 0.125 * (row[2 * xo] + row[2 * xo + 1]);
                    }
                }
            }
        }
        let t = Tensor::from_raw([b, c, ox, oy, oz], out);
        Ok(self.push(t, Op::AvgPool(input)))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let [b, c, nx, ny, nz] = x.shape();
        let (ux, uy, uz) = (2 * nx, 2 * ny, 2 * nz);
        let mut out = vec![0.0; b * c * ux * uy * uz];
        for (slab_i, o) in out.chunks_exact_mut(ux * uy * uz).enumerate() {
            let inp = &x.data()[slab_i * nx * ny * nz..(slab_i + 1) * nx * ny * nz];
            for z in 0..uz {
                for y in 0..uy {
                    let row = &inp[((z / 2) * ny + y / 2) * nx..((z / 2) * ny + y / 2 + 1) * nx];
                    let orow = &mut o[(z * uy + y) * ux..(z * uy + y + 1) * ux];
                    for (xo, v) in orow.iter_mut().enumerate() {
                        *v = row[xo / 2];
                    }
                }
            }
        }
        let t = Tensor::from_raw([b, c, ux, uy, uz], out);
        self.push(t, Op::Upsample(input))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = &self.nodes[inputs[0]].value;
        let (batch, spatial) = (first.batch(), first.spatial());
        let mut channels = 0;
        for &i in inputs {
            let v = &self.nodes[i].value;
            if v.batch() != batch || v.spatial() != spatial {
                return Err(Error::Shape("concat inputs differ in batch or spatial dims".into()));
            }
            channels += v.channels();
        }
        let s = first.spatial_len();
        let mut out = Vec::with_capacity(batch * channels * s);
        for b in 0..batch {
            for &i in inputs {
                let v = &self.nodes[i].value;
                out.extend_from_slice(&v.data()[b * v.channels() * s..(b + 1) * v.channels() * s]);
            }
        }
        let t = Tensor::from_raw([batch, channels, spatial[0], spatial[1], spatial[2]], out);
        Ok(self.push(t, Op::Concat(inputs.to_vec())))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (&self.nodes[a].value, &self.nodes[b].value);
        if x.shape() != y.shape() {
            return Err(Error::Shape("add operands differ in shape".into()));
        }
        let t = Tensor::from_raw(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect());
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Spatial mean per channel, producing `[B, C, 1, 1, 1]`.
    pub fn global_avg(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let s = x.spatial_len() as f64;
        let out = x.data().chunks_exact(x.spatial_len()).map(|c| c.iter().sum::<f64>() / s).collect();
        let t = Tensor::from_raw([x.batch(), x.channels(), 1, 1, 1], out);
        self.push(t, Op::GlobalAvg(input))
    }

    /// `x[b, c, ·] * s[b, c]`.
    pub fn scale_channels(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let (xv, sv) = (&self.nodes[x].value, &self.nodes[s].value);
        if sv.shape() != [xv.batch(), xv.channels(), 1, 1, 1] {
            return Err(Error::Shape("channel scale must be [B, C, 1, 1, 1]".into()));
        }
        let n = xv.spatial_len();
        let mut out = xv.data().to_vec();
        for (k, chunk) in out.chunks_exact_mut(n).enumerate() {
            let f = sv.data()[k];
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let t = Tensor::from_raw(xv.shape(), out);
        Ok(self.push(t, Op::ScaleChannels { x, s }))
    }

    /// `x[b, c, p] * a[b, 0, p]`.
    pub fn scale_spatial(&mut self, x: NodeId, a: NodeId) -> Result<NodeId> {
        let (xv, av) = (&self.nodes[x].value, &self.nodes[a].value);
        if av.channels() != 1 || av.batch() != xv.batch() || av.spatial() != xv.spatial() {
            return Err(Error::Shape("spatial gate must be [B, 1, X, Y, Z]".into()));
        }
        let n = xv.spatial_len();
        let mut out = xv.data().to_vec();
        for (k, chunk) in out.chunks_exact_mut(n).enumerate() {
            let gate = av.slab(k / xv.channels(), 0);
            chunk.iter_mut().zip(gate).for_each(|(v, g)| *v *= g);
        }
        let t = Tensor::from_raw(xv.shape(), out);
        Ok(self.push(t, Op::ScaleSpatial { x, a }))
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        !matches!(self.nodes[id].op, Op::Input)
    }

    /// Back-propagate `seed` (the gradient of the loss w.r.t. `output`).
    pub fn backward(&self, params: &ParamStore, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if seed.shape() != self.nodes[output].value.shape() {
            return Err(Error::Shape("seed gradient shape differs from output".into()));
        }
        let mut grads = params.zeros_like();
        let mut node_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        node_grads[output] = Some(seed.clone());

        fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
            match slot {
                Some(t) => t.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => *slot = Some(g),
            }
        }

        for id in (0..=output).rev() {
            let Some(g) = node_grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    input,
                    weight,
                    bias,
                    kernel,
                } => {
                    let x = &self.nodes[*input].value;
                    let w = params.get(*weight);
                    let geom = ConvGeom {
                        batch: x.batch(),
                        cin: w.shape[1],
                        cout: w.shape[0],
                        dims: x.spatial(),
                        kernel: *kernel,
                    };
                    let (gw, gb) = if let Some(b) = bias {
                        let (lo, hi) = grads.0.split_at_mut((*weight).max(*b));
                        if weight < b {
                            (&mut lo[*weight], Some(&mut hi[0]))
                        } else {
                            (&mut hi[0], Some(&mut lo[*b]))
                        }
                    } else {
                        (&mut grads.0[*weight], None)
                    };
                    let gi = conv_backward(
                        x,
                        &w.data,
                        &g,
                        &geom,
                        gw,
                        gb.map(|v| v.as_mut_slice()),
                        self.needs_grad(*input),
                    );
                    if let Some(gi) = gi {
                        accumulate(&mut node_grads[*input], gi);
                    }
                }
                Op::Silu(input) => {
                    let x = &self.nodes[*input].value;
                    let d = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * s * (1.0 + v * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut node_grads[*input], Tensor::from_raw(x.shape(), d));
                }
                Op::Sigmoid(input) => {
                    let y = &node.value;
                    let d = y.data().iter().zip(g.data()).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                    accumulate(&mut node_grads[*input], Tensor::from_raw(y.shape(), d));
                }
                Op::AvgPool(input) => {
                    let x = &self.nodes[*input].value;
                    let [_, _, nx, ny, nz] = x.shape();
                    let (ox, oy) = (nx / 2, ny / 2);
                    let os = g.spatial_len();
                    let mut d = vec![0.0; x.len()];
                    for (slab_i, dslab) in d.chunks_exact_mut(nx * ny * nz).enumerate() {
                        let gs = &g.data()[slab_i * os..(slab_i + 1) * os];
                        for z in 0..nz {
                            for y in 0..ny {
                                let grow = &gs[((z / 2) * oy + y / 2) * ox..((z / 2) * oy + y / 2 + 1) * ox];
                                let drow = &mut dslab[(z * ny + y) * nx..(z * ny + y + 1) * nx];
                                for (xi, v) in drow.iter_mut().enumerate() {
                                    *v = 0.125 * grow[xi / 2];
                                }
                            }
                        }
                    }
                    accumulate(&mut node_grads[*input], Tensor::from_raw(x.shape(), d));
                }
                Op::Upsample(input) => {
                    let x = &self.nodes[*input].value;
                    let [_, _, nx, ny, nz] = x.shape();
                    let (ux, uy, uz) = (2 * nx, 2 * ny, 2 * nz);
                    let mut d = vec![0.0; x.len()];
                    for (slab_i, dslab) in d.chunks_exact_mut(nx * ny * nz).enumerate() {
                        let gs = &g.data()[slab_i * ux * uy * uz..(slab_i + 1) * ux * uy * uz];
                        for z in 0..uz {
                            for y in 0..uy {
                                let grow = &gs[(z * uy + y) * ux..(z * uy + y + 1) * ux];
                                let base = ((z / 2) * ny + y / 2) * nx;
                                for (xi, v) in grow.iter().enumerate() {
                                    dslab[base + xi / 2] += v;
                                }
                            }
                        }
                    }
                    accumulate(&mut node_grads[*input], Tensor::from_raw(x.shape(), d));
                }
                Op::Concat(inputs) => {
                    let s = g.spatial_len();
                    let total_c = g.channels();
                    let mut offset = 0;
                    for &i in inputs {
                        let v = &self.nodes[i].value;
                        let c = v.channels();
                        if self.needs_grad(i) {
                            let mut d = Vec::with_capacity(v.len());
                            for b in 0..g.batch() {
                                let start = (b * total_c + offset) * s;
                                d.extend_from_slice(&g.data()[start..start + c * s]);
                            }
                            accumulate(&mut node_grads[i], Tensor::from_raw(v.shape(), d));
                        }
                        offset += c;
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut node_grads[*b], g.clone());
                    accumulate(&mut node_grads[*a], g);
                }
                Op::GlobalAvg(input) => {
                    let x = &self.nodes[*input].value;
                    let s = x.spatial_len();
                    let mut d = Vec::with_capacity(x.len());
                    for &gv in g.data() {
                        d.extend(std::iter::repeat_n(gv / s as f64, s));
                    }
                    accumulate(&mut node_grads[*input], Tensor::from_raw(x.shape(), d));
                }
                Op::ScaleChannels { x, s } => {
                    let xv = &self.nodes[*x].value;
                    let sv = &self.nodes[*s].value;
                    let n = xv.spatial_len();
                    let mut dx = g.data().to_vec();
                    let mut ds = vec![0.0; sv.len()];
                    for (k, chunk) in dx.chunks_exact_mut(n).enumerate() {
                        ds[k] = dot(&g.data()[k * n..(k + 1) * n], &xv.data()[k * n..(k + 1) * n]);
                        let f = sv.data()[k];
                        chunk.iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut node_grads[*s], Tensor::from_raw(sv.shape(), ds));
                    accumulate(&mut node_grads[*x], Tensor::from_raw(xv.shape(), dx));
                }
                Op::ScaleSpatial { x, a } => {
                    let xv = &self.nodes[*x].value;
                    let av = &self.nodes[*a].value;
                    let n = xv.spatial_len();
                    let c = xv.channels();
                    let mut dx = g.data().to_vec();
                    let mut da = vec![0.0; av.len()];
                    for (k, chunk) in dx.chunks_exact_mut(n).enumerate() {
                        let b = k / c;
                        let gate = av.slab(b, 0);
                        let xs = &xv.data()[k * n..(k + 1) * n];
                        let gs = &g.data()[k * n..(k + 1) * n];
                        let dab = &mut da[b * n..(b + 1) * n];
                        for p in 0..n {
                            dab[p] += gs[p] * xs[p];
                            chunk[p] *= gate[p];
                        }
                    }
                    accumulate(&mut node_grads[*a], Tensor::from_raw(av.shape(), da));
                    accumulate(&mut node_grads[*x], Tensor::from_raw(xv.shape(), dx));
                }
            }
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 5], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_raw(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Brute-force same-padded convolution used as an oracle.
    fn naive_conv(x: &Tensor, w: &Param, b: &[f64]) -> Vec<f64> {
        let [bs, cin, nx, ny, nz] = x.shape();
        let (cout, k) = (w.shape[0], w.shape[2]);
        let r = (k / 2) as isize;
        let mut out = vec![0.0; bs * cout * nx * ny * nz];
        for bi in 0..bs {
            for co in 0..cout {
                for z in 0..nz as isize {
                    for y in 0..ny as isize {
                        for xx in 0..nx as isize {
                            let mut acc = b[co];
                            for ci in 0..cin {
                                for kz in 0..k as isize {
                                    for ky in 0..k as isize {
                                        for kx in 0..k as isize {
                                            let (sx, sy, sz) = (xx + kx - r, y + ky - r, z + kz - r);
                                            if sx < 0 || sy < 0 || sz < 0 || sx >= nx as isize || sy >= ny as isize || sz >= nz as isize {
                                                continue;
                                            }
                                            let wi = ((((co * cin + ci) * k) + kz as usize) * k + ky as usize) * k + kx as usize;
                                            let xi = (((bi * cin + ci) * nz + sz as usize) * ny + sy as usize) * nx + sx as usize;
                                            acc += w.data[wi] * x.data()[xi];
                                        }
                                    }
                                }
                            }
                            let oi = (((bi * cout + co) * nz + z as usize) * ny + y as usize) * nx + xx as usize;
                            out[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamStore::new();
        let wdata = (0..3 * 2 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = params.push("w", vec![3, 2, 3, 3, 3], wdata);
        let b = params.push("b", vec![3], vec![0.1, -0.2, 0.3]);
        let x = random([2, 2, 5, 4, 3], &mut rng);
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let y = g.conv(&params, xi, w, Some(b)).unwrap();
        let expect = naive_conv(&x, params.get(w), &params.get(b).data);
        for (a, e) in g.value(y).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let x = g.input(random([1, 2, 4, 4, 2], &mut rng));
        let p = g.avg_pool(x).unwrap();
        assert_eq!(g.value(p).shape(), [1, 2, 2, 2, 1]);
        let u = g.upsample(p);
        assert_eq!(g.value(u).shape(), [1, 2, 4, 4, 2]);
        let total: f64 = g.value(x).data().iter().sum();
        let pooled: f64 = g.value(p).data().iter().sum();
        assert!((total - 8.0 * pooled).abs() < 1e-12);
        let odd = g.input(random([1, 1, 3, 4, 2], &mut rng));
        assert!(g.avg_pool(odd).is_err());
    }

    // Finite-difference check of every op through a scalar readout.
    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamStore::new();
        let mut add = |p: &mut ParamStore, name: &str, shape: Vec<usize>| {
            let n = shape.iter().product();
            p.push(name, shape, (0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
        };
        let w1 = add(&mut params, "w1", vec![2, 2, 3, 3, 3]);
        let b1 = add(&mut params, "b1", vec![2]);
        let w2 = add(&mut params, "w2", vec![2, 4, 1, 1, 1]);
        let ws = add(&mut params, "ws", vec![2, 2, 1, 1, 1]);
        let wa = add(&mut params, "wa", vec![1, 2, 3, 3, 3]);
        let x = random([2, 2, 4, 4, 2], &mut rng);
        let readout = random([2, 2, 4, 4, 2], &mut rng);

        let run = |params: &ParamStore| -> (f64, Graph, NodeId) {
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let c = g.conv(params, xi, w1, Some(b1)).unwrap();
            let a = g.silu(c);
            let p = g.avg_pool(a).unwrap();
            let u = g.upsample(p);
            let cat = g.concat(&[a, u]).unwrap();
            let c2 = g.conv(params, cat, w2, None).unwrap();
            let s = g.global_avg(c2);
            let sc = g.conv(params, s, ws, None).unwrap();
            let sg = g.sigmoid(sc);
            let gated = g.scale_channels(c2, sg).unwrap();
            let att = g.conv(params, gated, wa, None).unwrap();
            let att = g.sigmoid(att);
            let sp = g.scale_spatial(gated, att).unwrap();
            let out = g.add(sp, a).unwrap();
            let loss = g.value(out).data().iter().zip(readout.data()).map(|(a, b)| a * b).sum();
            (loss, g, out)
        };
        let (_, g, out) = run(&params);
        let grads = g.backward(&params, out, &readout).unwrap();
        let h = 1e-5;
        for pid in 0..params.len() {
            for k in 0..params.get(pid).data.len() {
                let mut plus = params.clone();
                plus.get_mut(pid).data[k] += h;
                let mut minus = params.clone();
                minus.get_mut(pid).data[k] -= h;
                let fd = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let an = grads.get(pid)[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(rel < 1e-5, "param {} [{k}]: analytic {an} vs fd {fd}", params.get(pid).name);
            }
        }
    }
}
