//! Reverse-mode differentiation tape.
//!
//! Forward ops append records in execution order; [`Tape::backward`] walks
//! them strictly in reverse, accumulating gradients additively across
//! fan-out. Each record id is produced exactly once. A tape supports one
//! backward pass; values and gradients stay readable afterwards.

use super::kernels::{col2im_add, conv_out_dim, im2col, mm_nn, transpose};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Reduction over the channel axis, producing `[N,1,H,W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChanReduce {
    Sum,
    Mean,
    Max,
}

enum Op<S: Scalar> {
    Leaf,
    Conv2d {
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        stride: usize,
        padding: usize,
    },
    Linear {
        input: VarId,
        weight: VarId,
        bias: VarId,
    },
    Pool2d {
        input: VarId,
        mode: PoolMode,
        k: usize,
        stride: usize,
        argmax: Vec<u32>,
    },
    GlobalPool {
        input: VarId,
        mode: PoolMode,
        argmax: Vec<u32>,
    },
    ChannelL2Norm {
        input: VarId,
        denoms: Vec<S>,
    },
    Upsample2x {
        input: VarId,
    },
    Relu {
        input: VarId,
    },
    Sigmoid {
        input: VarId,
    },
    Concat {
        inputs: Vec<VarId>,
        axis: usize,
    },
    Narrow {
        input: VarId,
        axis: usize,
        start: usize,
        len: usize,
    },
    BatchNorm {
        input: VarId,
        gamma: VarId,
        beta: VarId,
        training: bool,
        invstd: Vec<S>,
        xhat: Vec<S>,
    },
    Binary {
        kind: BinKind,
        a: VarId,
        b: VarId,
    },
    Affine {
        input: VarId,
        mul: S,
    },
    SqrtEps {
        input: VarId,
    },
    ChannelReduce {
        input: VarId,
        kind: ChanReduce,
        argmax: Vec<u32>,
    },
    ReduceAll {
        input: VarId,
        mean: bool,
    },
    Clamp {
        input: VarId,
        lo: S,
        hi: S,
    },
    Reshape {
        input: VarId,
    },
    BceWithLogits {
        logits: VarId,
        targets: VarId,
    },
}

struct Node<S: Scalar> {
    tensor: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Ordered record of primitive applications plus their values and gradients.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// Register an input value. Its `requires_grad` flag decides whether
    /// `backward` will populate a gradient for it.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> VarId {
        let requires_grad = tensor.requires_grad_flag();
        self.push(tensor, requires_grad, Op::Leaf)
    }

    /// Convenience: constant leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<S>) -> VarId {
        self.push(tensor, false, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor<S> {
        &self.nodes[id.0].tensor
    }

    pub fn grad(&self, id: VarId) -> Option<&[S]> {
        self.nodes[id.0].tensor.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<S>, requires_grad: bool, op: Op<S>) -> VarId {
        self.nodes.push(Node {
            tensor,
            requires_grad,
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn shape_of(&self, id: VarId) -> &[usize] {
        self.nodes[id.0].tensor.shape()
    }

    fn data_of(&self, id: VarId) -> &[S] {
        self.nodes[id.0].tensor.data()
    }

    // ---- primitives ----------------------------------------------------

    /// 2-d cross-correlation with uniform stride/padding.
    pub fn conv2d(
        &mut self,
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        stride: usize,
        padding: usize,
    ) -> Result<VarId> {
        let (n, cin, h, w) = self.value(input).dims4()?;
        let (cout, wcin, kh, kw) = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, weight expects {wcin}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape_of(b) != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?}, expected [{cout}]", self.shape_of(b)),
                ));
            }
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive".to_string()));
        }
        let ho = conv_out_dim(h, kh, stride, padding)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kh} too large for height {h} with padding {padding}")))?;
        let wo = conv_out_dim(w, kw, stride, padding)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::shape("conv2d", format!("kernel {kw} too large for width {w} with padding {padding}")))?;

        let ckk = cin * kh * kw;
        let mut out = vec![S::ZERO; n * cout * ho * wo];
        let mut col = vec![S::ZERO; ckk * ho * wo];
        {
            let x = self.data_of(input);
            let wdat = self.data_of(weight);
            for ni in 0..n {
                im2col(
                    &x[ni * cin * h * w..(ni + 1) * cin * h * w],
                    cin,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    padding,
                    ho,
                    wo,
                    &mut col,
                );
                mm_nn(
                    wdat,
                    &col,
                    cout,
                    ckk,
                    ho * wo,
                    &mut out[ni * cout * ho * wo..(ni + 1) * cout * ho * wo],
                );
            }
            if let Some(b) = bias {
                let bdat = self.data_of(b);
                for ni in 0..n {
                    for (co, &bv) in bdat.iter().enumerate() {
                        let base = (ni * cout + co) * ho * wo;
                        for v in &mut out[base..base + ho * wo] {
                            *v += bv;
                        }
                    }
                }
            }
        }
        let req = self.requires(input)
            || self.requires(weight)
            || bias.map(|b| self.requires(b)).unwrap_or(false);
        Ok(self.push(
            Tensor::from_vec(&[n, cout, ho, wo], out),
            req,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
        ))
    }

    /// Affine map `x @ weight^T + bias` over a batch of rows.
    pub fn linear(&mut self, input: VarId, weight: VarId, bias: VarId) -> Result<VarId> {
        let (n, din) = self.value(input).dims2()?;
        let (dout, wdin) = self.value(weight).dims2()?;
        if wdin != din {
            return Err(Error::shape(
                "linear",
                format!("input dim {din}, weight expects {wdin}"),
            ));
        }
        if self.shape_of(bias) != [dout] {
            return Err(Error::shape(
                "linear",
                format!("bias shape {:?}, expected [{dout}]", self.shape_of(bias)),
            ));
        }
        let mut out = vec![S::ZERO; n * dout];
        {
            let x = self.data_of(input);
            let wdat = self.data_of(weight);
            let bdat = self.data_of(bias);
            let mut wt = vec![S::ZERO; wdat.len()];
            transpose(wdat, dout, din, &mut wt);
            mm_nn(x, &wt, n, din, dout, &mut out);
            for row in out.chunks_exact_mut(dout) {
                for (v, &b) in row.iter_mut().zip(bdat) {
                    *v += b;
                }
            }
        }
        let req = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            Tensor::from_vec(&[n, dout], out),
            req,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Windowed max/average pooling. Max routes its gradient to the first
    /// argmax in row-major scan order.
    pub fn pool2d(&mut self, input: VarId, mode: PoolMode, k: usize, stride: usize) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if k == 0 || stride == 0 {
            return Err(Error::shape("pool2d", "k and stride must be positive".to_string()));
        }
        if k > h || k > w {
            return Err(Error::shape(
                "pool2d",
                format!("window {k} larger than input {h}x{w}"),
            ));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let mut out = vec![S::ZERO; n * c * ho * wo];
        let mut argmax = Vec::new();
        if mode == PoolMode::Max {
            argmax = vec![0u32; out.len()];
        }
        {
            let x = self.data_of(input);
            let inv = S::of(1.0 / (k * k) as f64);
            for nc in 0..n * c {
                let plane = &x[nc * h * w..(nc + 1) * h * w];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let oidx = (nc * ho + oy) * wo + ox;
                        match mode {
                            PoolMode::Max => {
                                let mut best = S::of(f64::NEG_INFINITY);
                                let mut best_at = 0usize;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        let at = (oy * stride + ky) * w + ox * stride + kx;
                                        if plane[at] > best {
                                            best = plane[at];
                                            best_at = at;
                                        }
                                    }
                                }
                                out[oidx] = best;
                                argmax[oidx] = (nc * h * w + best_at) as u32;
                            }
                            PoolMode::Avg => {
                                let mut s = S::ZERO;
                                for ky in 0..k {
                                    for kx in 0..k {
                                        s += plane[(oy * stride + ky) * w + ox * stride + kx];
                                    }
                                }
                                out[oidx] = s * inv;
                            }
                        }
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&[n, c, ho, wo], out),
            req,
            Op::Pool2d {
                input,
                mode,
                k,
                stride,
                argmax,
            },
        ))
    }

    /// Reduce all spatial positions per channel to `[N,C,1,1]`.
    pub fn global_pool(&mut self, input: VarId, mode: PoolMode) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let mut out = vec![S::ZERO; n * c];
        let mut argmax = Vec::new();
        if mode == PoolMode::Max {
            argmax = vec![0u32; out.len()];
        }
        {
            let x = self.data_of(input);
            for nc in 0..n * c {
                let plane = &x[nc * hw..(nc + 1) * hw];
                match mode {
                    PoolMode::Avg => {
                        let s: S = plane.iter().copied().sum();
                        out[nc] = s * S::of(1.0 / hw as f64);
                    }
                    PoolMode::Max => {
                        let (mut best, mut at) = (plane[0], 0usize);
                        for (i, &v) in plane.iter().enumerate().skip(1) {
                            if v > best {
                                best = v;
                                at = i;
                            }
                        }
                        out[nc] = best;
                        argmax[nc] = (nc * hw + at) as u32;
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&[n, c, 1, 1], out),
            req,
            Op::GlobalPool {
                input,
                mode,
                argmax,
            },
        ))
    }

    /// Per-pixel channel vector scaled to unit L2 norm; vectors with norm
    /// below `eps` are divided by `eps` instead, so the zero vector maps to
    /// itself.
    pub fn channel_l2_normalize(&mut self, input: VarId, eps: S) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let mut out = vec![S::ZERO; n * c * hw];
        let mut denoms = vec![S::ZERO; n * hw];
        {
            let x = self.data_of(input);
            for ni in 0..n {
                for p in 0..hw {
                    let mut ss = S::ZERO;
                    for ci in 0..c {
                        let v = x[(ni * c + ci) * hw + p];
                        ss += v * v;
                    }
                    let norm = ss.sqrt();
                    let denom = norm.maxs(eps);
                    denoms[ni * hw + p] = denom;
                    for ci in 0..c {
                        let at = (ni * c + ci) * hw + p;
                        out[at] = x[at] / denom;
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&[n, c, h, w], out),
            req,
            Op::ChannelL2Norm { input, denoms },
        ))
    }

    /// Bilinear 2x upsampling (align-corners false). Constant maps stay
    /// exactly constant: interpolation weights are dyadic.
    pub fn upsample2x_bilinear(&mut self, input: VarId) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![S::ZERO; n * c * h2 * w2];
        {
            let x = self.data_of(input);
            let ycoord: Vec<(usize, usize, f64)> = (0..h2).map(|d| src_lerp(d, h)).collect();
            let xcoord: Vec<(usize, usize, f64)> = (0..w2).map(|d| src_lerp(d, w)).collect();
            for nc in 0..n * c {
                let plane = &x[nc * h * w..(nc + 1) * h * w];
                let oplane = &mut out[nc * h2 * w2..(nc + 1) * h2 * w2];
                for (dy, &(y0, y1, ty)) in ycoord.iter().enumerate() {
                    for (dx, &(x0, x1, tx)) in xcoord.iter().enumerate() {
                        let a = plane[y0 * w + x0];
                        let b = plane[y0 * w + x1];
                        let cdn = plane[y1 * w + x0];
                        let d = plane[y1 * w + x1];
                        let top = a * S::of(1.0 - tx) + b * S::of(tx);
                        let bot = cdn * S::of(1.0 - tx) + d * S::of(tx);
                        oplane[dy * w2 + dx] = top * S::of(1.0 - ty) + bot * S::of(ty);
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&[n, c, h2, w2], out),
            req,
            Op::Upsample2x { input },
        ))
    }

    pub fn relu(&mut self, input: VarId) -> VarId {
        let out = self.value(input).map(|v| v.maxs(S::ZERO));
        let req = self.requires(input);
        self.push(out, req, Op::Relu { input })
    }

    /// Numerically stable logistic; output strictly inside (0,1).
    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let out = self.value(input).map(sigmoid_stable);
        let req = self.requires(input);
        self.push(out, req, Op::Sigmoid { input })
    }

    pub fn concat(&mut self, inputs: &[VarId], axis: usize) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(Error::shape("concat", "no inputs".to_string()));
        }
        let first = self.shape_of(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for rank {}", first.len()),
            ));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.shape_of(id);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape(
                    "concat",
                    format!("shape {s:?} incompatible with {first:?} on axis {axis}"),
                ));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![S::ZERO; outer * axis_total * inner];
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.shape_of(id)[axis];
            let block = s_axis * inner;
            let data = self.data_of(id);
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                out[dst..dst + block].copy_from_slice(&data[o * block..(o + 1) * block]);
            }
            offset += s_axis;
        }
        let req = inputs.iter().any(|&id| self.requires(id));
        Ok(self.push(
            Tensor::from_vec(&out_shape, out),
            req,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous slice along one axis; the inverse of `concat`.
    pub fn narrow(&mut self, input: VarId, axis: usize, start: usize, len: usize) -> Result<VarId> {
        let shape = self.shape_of(input).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape(
                "narrow",
                format!("slice {start}..{} out of range on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut out = vec![S::ZERO; outer * len * inner];
        let data = self.data_of(input);
        for o in 0..outer {
            let src = (o * shape[axis] + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&data[src..src + len * inner]);
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&out_shape, out),
            req,
            Op::Narrow {
                input,
                axis,
                start,
                len,
            },
        ))
    }

    /// Split along an axis into pieces of the given sizes.
    pub fn split(&mut self, input: VarId, axis: usize, sizes: &[usize]) -> Result<Vec<VarId>> {
        let total: usize = sizes.iter().sum();
        let dim = self.shape_of(input)[axis];
        if total != dim {
            return Err(Error::shape(
                "split",
                format!("sizes sum to {total}, axis has {dim}"),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &len in sizes {
            out.push(self.narrow(input, axis, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Batch normalization over `[N,H,W]` per channel. In training mode the
    /// batch statistics normalize and the running buffers are updated by
    /// `momentum`; in eval mode the running buffers normalize.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: &mut Tensor<S>,
        running_var: &mut Tensor<S>,
        training: bool,
        momentum: S,
        eps: S,
    ) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if self.shape_of(gamma) != [c] || self.shape_of(beta) != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("gamma/beta must be [{c}]"),
            ));
        }
        if running_mean.shape() != [c] || running_var.shape() != [c] {
            return Err(Error::shape(
                "batchnorm2d",
                format!("running stats must be [{c}]"),
            ));
        }
        let m = n * h * w;
        if m == 0 {
            return Err(Error::shape("batchnorm2d", "empty batch".to_string()));
        }
        let hw = h * w;
        let mut mean = vec![S::ZERO; c];
        let mut var = vec![S::ZERO; c];
        {
            let x = self.data_of(input);
            if training {
                let inv_m = S::of(1.0 / m as f64);
                for ci in 0..c {
                    let mut s = S::ZERO;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for &v in &x[base..base + hw] {
                            s += v;
                        }
                    }
                    let mu = s * inv_m;
                    let mut ss = S::ZERO;
                    for ni in 0..n {
                        let base = (ni * c + ci) * hw;
                        for &v in &x[base..base + hw] {
                            let d = v - mu;
                            ss += d * d;
                        }
                    }
                    mean[ci] = mu;
                    var[ci] = ss * inv_m; // biased, matching the running buffers
                }
                let one_m = S::ONE - momentum;
                for ci in 0..c {
                    running_mean.data_mut()[ci] = one_m * running_mean.data()[ci] + momentum * mean[ci];
                    running_var.data_mut()[ci] = one_m * running_var.data()[ci] + momentum * var[ci];
                }
            } else {
                mean.copy_from_slice(running_mean.data());
                var.copy_from_slice(running_var.data());
            }
        }
        let invstd: Vec<S> = var.iter().map(|&v| S::ONE / (v + eps).sqrt()).collect();
        let len = n * c * hw;
        let mut xhat = vec![S::ZERO; len];
        let mut out = vec![S::ZERO; len];
        {
            let x = self.data_of(input);
            let g = self.data_of(gamma);
            let b = self.data_of(beta);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * hw;
                    let (mu, is, ga, be) = (mean[ci], invstd[ci], g[ci], b[ci]);
                    for p in 0..hw {
                        let xh = (x[base + p] - mu) * is;
                        xhat[base + p] = xh;
                        out[base + p] = ga * xh + be;
                    }
                }
            }
        }
        let req = self.requires(input) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            Tensor::from_vec(&[n, c, h, w], out),
            req,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                training,
                invstd,
                xhat,
            },
        ))
    }

    fn binary(&mut self, kind: BinKind, a: VarId, b: VarId) -> Result<VarId> {
        let bc = Bcast::new(self.shape_of(a), self.shape_of(b))
            .ok_or_else(|| {
                Error::shape(
                    "binary",
                    format!(
                        "shapes {:?} and {:?} do not broadcast",
                        self.shape_of(a),
                        self.shape_of(b)
                    ),
                )
            })?;
        let mut out = vec![S::ZERO; bc.len()];
        {
            let (da, db) = (self.data_of(a), self.data_of(b));
            bc.for_each(|o, ia, ib| {
                let (x, y) = (da[ia], db[ib]);
                out[o] = match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                    BinKind::Div => x / y,
                };
            });
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::from_vec(&bc.out_shape, out),
            req,
            Op::Binary { kind, a, b },
        ))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary(BinKind::Div, a, b)
    }

    /// Elementwise `mul * x + add`.
    pub fn affine(&mut self, input: VarId, mul: S, add: S) -> VarId {
        let out = self.value(input).map(|v| mul * v + add);
        let req = self.requires(input);
        self.push(out, req, Op::Affine { input, mul })
    }

    /// `sqrt(x + eps)`; eps keeps the gradient bounded at x = 0.
    pub fn sqrt_eps(&mut self, input: VarId, eps: S) -> VarId {
        let out = self.value(input).map(|v| (v + eps).sqrt());
        let req = self.requires(input);
        self.push(out, req, Op::SqrtEps { input })
    }

    /// Reduce the channel axis of `[N,C,H,W]` to `[N,1,H,W]`.
    pub fn channel_reduce(&mut self, input: VarId, kind: ChanReduce) -> Result<VarId> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let hw = h * w;
        let mut out = vec![S::ZERO; n * hw];
        let mut argmax = Vec::new();
        if kind == ChanReduce::Max {
            argmax = vec![0u32; out.len()];
        }
        {
            let x = self.data_of(input);
            for ni in 0..n {
                for p in 0..hw {
                    match kind {
                        ChanReduce::Sum | ChanReduce::Mean => {
                            let mut s = S::ZERO;
                            for ci in 0..c {
                                s += x[(ni * c + ci) * hw + p];
                            }
                            if kind == ChanReduce::Mean {
                                s = s * S::of(1.0 / c as f64);
                            }
                            out[ni * hw + p] = s;
                        }
                        ChanReduce::Max => {
                            let mut best = x[ni * c * hw + p];
                            let mut at = 0usize;
                            for ci in 1..c {
                                let v = x[(ni * c + ci) * hw + p];
                                if v > best {
                                    best = v;
                                    at = ci;
                                }
                            }
                            out[ni * hw + p] = best;
                            argmax[ni * hw + p] = ((ni * c + at) * hw + p) as u32;
                        }
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            Tensor::from_vec(&[n, 1, h, w], out),
            req,
            Op::ChannelReduce {
                input,
                kind,
                argmax,
            },
        ))
    }

    pub fn sum_all(&mut self, input: VarId) -> VarId {
        let s: S = self.data_of(input).iter().copied().sum();
        let req = self.requires(input);
        self.push(
            Tensor::scalar(s),
            req,
            Op::ReduceAll { input, mean: false },
        )
    }

    pub fn mean_all(&mut self, input: VarId) -> VarId {
        let d = self.data_of(input);
        let s: S = d.iter().copied().sum();
        let out = s * S::of(1.0 / d.len() as f64);
        let req = self.requires(input);
        self.push(
            Tensor::scalar(out),
            req,
            Op::ReduceAll { input, mean: true },
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, input: VarId, lo: S, hi: S) -> VarId {
        let out = self.value(input).map(|v| v.maxs(lo).mins(hi));
        let req = self.requires(input);
        self.push(out, req, Op::Clamp { input, lo, hi })
    }

    pub fn reshape(&mut self, input: VarId, shape: &[usize]) -> Result<VarId> {
        let len: usize = shape.iter().product();
        if len != self.value(input).len() {
            return Err(Error::shape(
                "reshape",
                format!(
                    "cannot view {:?} as {shape:?}",
                    self.shape_of(input)
                ),
            ));
        }
        let out = Tensor::from_vec(shape, self.data_of(input).to_vec());
        let req = self.requires(input);
        Ok(self.push(out, req, Op::Reshape { input }))
    }

    /// Mean binary cross-entropy on logits, in the log-sum-exp form that
    /// never overflows.
    pub fn bce_with_logits(&mut self, logits: VarId, targets: VarId) -> Result<VarId> {
        if self.shape_of(logits) != self.shape_of(targets) {
            return Err(Error::shape(
                "bce_with_logits",
                format!(
                    "logits {:?} vs targets {:?}",
                    self.shape_of(logits),
                    self.shape_of(targets)
                ),
            ));
        }
        let z = self.data_of(logits);
        let t = self.data_of(targets);
        let mut acc = S::ZERO;
        for (&zi, &ti) in z.iter().zip(t) {
            // max(z,0) - z*t + ln(1 + exp(-|z|))
            acc += zi.maxs(S::ZERO) - zi * ti + (S::ONE + (-zi.abs()).exp()).ln();
        }
        let out = acc * S::of(1.0 / z.len() as f64);
        let req = self.requires(logits) || self.requires(targets);
        Ok(self.push(
            Tensor::scalar(out),
            req,
            Op::BceWithLogits { logits, targets },
        ))
    }

    // ---- backward -------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// reachable node with `requires_grad`; fan-out accumulates additively.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.consumed {
            return Err(Error::value("backward", "tape already consumed by a previous backward"));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::value(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape_of(loss)),
            ));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::value(
                "backward",
                "loss does not depend on any input requiring gradients",
            ));
        }
        self.consumed = true;
        *self.nodes[loss.0].tensor.grad_slot() = Some(vec![S::ONE]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[idx].tensor.grad_slot().take() else {
                continue;
            };
            // Take the op out so input gradients can be written while the
            // saved intermediates are read.
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            self.dispatch_backward(idx, &gout, &op);
            // Keep the node's gradient readable after the sweep.
            *self.nodes[idx].tensor.grad_slot() = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: VarId, delta: Vec<S>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let len = self.nodes[id.0].tensor.len();
        debug_assert_eq!(len, delta.len());
        let slot = self.nodes[id.0].tensor.grad_slot();
        match slot {
            Some(g) => {
                for (gv, dv) in g.iter_mut().zip(delta) {
                    *gv += dv;
                }
            }
            None => *slot = Some(delta),
        }
    }

    fn dispatch_backward(&mut self, idx: usize, gout: &[S], op: &Op<S>) {
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => self.backward_conv2d(gout, *input, *weight, *bias, *stride, *padding),
            Op::Linear {
                input,
                weight,
                bias,
            } => self.backward_linear(gout, *input, *weight, *bias),
            Op::Pool2d {
                input,
                mode,
                k,
                stride,
                argmax,
            } => self.backward_pool2d(idx, gout, *input, *mode, *k, *stride, argmax),
            Op::GlobalPool {
                input,
                mode,
                argmax,
            } => self.backward_global_pool(gout, *input, *mode, argmax),
            Op::ChannelL2Norm { input, denoms } => {
                self.backward_channel_l2(idx, gout, *input, denoms)
            }
            Op::Upsample2x { input } => self.backward_upsample(gout, *input),
            Op::Relu { input } => {
                let x = self.data_of(*input);
                let delta: Vec<S> = x
                    .iter()
                    .zip(gout)
                    .map(|(&xv, &g)| if xv > S::ZERO { g } else { S::ZERO })
                    .collect();
                self.accumulate(*input, delta);
            }
            Op::Sigmoid { input } => {
                let y = self.nodes[idx].tensor.data();
                let delta: Vec<S> = y
                    .iter()
                    .zip(gout)
                    .map(|(&yv, &g)| g * yv * (S::ONE - yv))
                    .collect();
                self.accumulate(*input, delta);
            }
            Op::Concat { inputs, axis } => self.backward_concat(idx, gout, inputs, *axis),
            Op::Narrow {
                input,
                axis,
                start,
                len,
            } => self.backward_narrow(gout, *input, *axis, *start, *len),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                training,
                invstd,
                xhat,
            } => self.backward_batchnorm(gout, *input, *gamma, *beta, *training, invstd, xhat),
            Op::Binary { kind, a, b } => self.backward_binary(gout, *kind, *a, *b),
            Op::Affine { input, mul } => {
                let delta: Vec<S> = gout.iter().map(|&g| g * *mul).collect();
                self.accumulate(*input, delta);
            }
            Op::SqrtEps { input } => {
                let y = self.nodes[idx].tensor.data();
                let half = S::of(0.5);
                let delta: Vec<S> = y.iter().zip(gout).map(|(&yv, &g)| g * half / yv).collect();
                self.accumulate(*input, delta);
            }
            Op::ChannelReduce {
                input,
                kind,
                argmax,
            } => self.backward_channel_reduce(gout, *input, *kind, argmax),
            Op::ReduceAll { input, mean } => {
                let len = self.nodes[input.0].tensor.len();
                let g = if *mean {
                    gout[0] * S::of(1.0 / len as f64)
                } else {
                    gout[0]
                };
                let delta = vec![g; len];
                self.accumulate(*input, delta);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.data_of(*input);
                let delta: Vec<S> = x
                    .iter()
                    .zip(gout)
                    .map(|(&xv, &g)| if xv > *lo && xv < *hi { g } else { S::ZERO })
                    .collect();
                self.accumulate(*input, delta);
            }
            Op::Reshape { input } => self.accumulate(*input, gout.to_vec()),
            Op::BceWithLogits { logits, targets } => {
                let scale = gout[0] * S::of(1.0 / self.data_of(*logits).len() as f64);
                let dz: Vec<S> = {
                    let z = self.data_of(*logits);
                    let t = self.data_of(*targets);
                    z.iter()
                        .zip(t)
                        .map(|(&zi, &ti)| scale * (sigmoid_stable(zi) - ti))
                        .collect()
                };
                self.accumulate(*logits, dz);
                if self.requires(*targets) {
                    let dt: Vec<S> = self
                        .data_of(*logits)
                        .iter()
                        .map(|&zi| -scale * zi)
                        .collect();
                    self.accumulate(*targets, dt);
                }
            }
        }
    }

    fn backward_conv2d(
        &mut self,
        gout: &[S],
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        stride: usize,
        padding: usize,
    ) {
        let (n, cin, h, w) = self.value(input).dims4().unwrap();
        let (cout, _, kh, kw) = self.value(weight).dims4().unwrap();
        let ho = conv_out_dim(h, kh, stride, padding).unwrap();
        let wo = conv_out_dim(w, kw, stride, padding).unwrap();
        let ckk = cin * kh * kw;
        let hw_out = ho * wo;

        let need_w = self.requires(weight);
        let need_x = self.requires(input);
        let mut gw = vec![S::ZERO; cout * ckk];
        let mut gx = vec![S::ZERO; n * cin * h * w];
        {
            let x = self.data_of(input);
            let wdat = self.data_of(weight);
            let mut col = vec![S::ZERO; ckk * hw_out];
            let mut colt = vec![S::ZERO; ckk * hw_out];
            let mut wt = vec![S::ZERO; cout * ckk];
            if need_x {
                transpose(wdat, cout, ckk, &mut wt);
            }
            let mut gcol = vec![S::ZERO; ckk * hw_out];
            for ni in 0..n {
                let gn = &gout[ni * cout * hw_out..(ni + 1) * cout * hw_out];
                if need_w {
                    im2col(
                        &x[ni * cin * h * w..(ni + 1) * cin * h * w],
                        cin,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        padding,
                        ho,
                        wo,
                        &mut col,
                    );
                    transpose(&col, ckk, hw_out, &mut colt);
                    // gw += gn [cout, hw] x col^T [hw, ckk]
                    mm_nn(gn, &colt, cout, hw_out, ckk, &mut gw);
                }
                if need_x {
                    for v in gcol.iter_mut() {
                        *v = S::ZERO;
                    }
                    // gcol = W^T [ckk, cout] x gn [cout, hw]
                    mm_nn(&wt, gn, ckk, cout, hw_out, &mut gcol);
                    col2im_add(
                        &gcol,
                        cin,
                        h,
                        w,
                        kh,
                        kw,
                        stride,
                        padding,
                        ho,
                        wo,
                        &mut gx[ni * cin * h * w..(ni + 1) * cin * h * w],
                    );
                }
            }
        }
        if need_w {
            self.accumulate(weight, gw);
        }
        if need_x {
            self.accumulate(input, gx);
        }
        if let Some(b) = bias {
            if self.requires(b) {
                let mut gb = vec![S::ZERO; cout];
                for ni in 0..n {
                    for co in 0..cout {
                        let base = (ni * cout + co) * hw_out;
                        for &g in &gout[base..base + hw_out] {
                            gb[co] += g;
                        }
                    }
                }
                self.accumulate(b, gb);
            }
        }
    }

    fn backward_linear(&mut self, gout: &[S], input: VarId, weight: VarId, bias: VarId) {
        let (n, din) = self.value(input).dims2().unwrap();
        let (dout, _) = self.value(weight).dims2().unwrap();
        if self.requires(input) {
            // gx = g [n, dout] x W [dout, din]
            let mut gx = vec![S::ZERO; n * din];
            mm_nn(gout, self.data_of(weight), n, dout, din, &mut gx);
            self.accumulate(input, gx);
        }
        if self.requires(weight) {
            // gW = g^T [dout, n] x x [n, din]
            let mut gt = vec![S::ZERO; n * dout];
            transpose(gout, n, dout, &mut gt);
            let mut gw = vec![S::ZERO; dout * din];
            mm_nn(&gt, self.data_of(input), dout, n, din, &mut gw);
            self.accumulate(weight, gw);
        }
        if self.requires(bias) {
            let mut gb = vec![S::ZERO; dout];
            for row in gout.chunks_exact(dout) {
                for (g, &v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
            self.accumulate(bias, gb);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_pool2d(
        &mut self,
        idx: usize,
        gout: &[S],
        input: VarId,
        mode: PoolMode,
        k: usize,
        stride: usize,
        argmax: &[u32],
    ) {
        let (_, _, h, w) = self.value(input).dims4().unwrap();
        let mut gx = vec![S::ZERO; self.nodes[input.0].tensor.len()];
        match mode {
            PoolMode::Max => {
                for (o, &g) in gout.iter().enumerate() {
                    gx[argmax[o] as usize] += g;
                }
            }
            PoolMode::Avg => {
                let inv = S::of(1.0 / (k * k) as f64);
                let out_shape = self.nodes[idx].tensor.shape();
                let (ho, wo) = (out_shape[2], out_shape[3]);
                let nc = out_shape[0] * out_shape[1];
                for nci in 0..nc {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let g = gout[(nci * ho + oy) * wo + ox] * inv;
                            for ky in 0..k {
                                for kx in 0..k {
                                    gx[nci * h * w + (oy * stride + ky) * w + ox * stride + kx] += g;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.accumulate(input, gx);
    }

    fn backward_global_pool(&mut self, gout: &[S], input: VarId, mode: PoolMode, argmax: &[u32]) {
        let (n, c, h, w) = self.value(input).dims4().unwrap();
        let hw = h * w;
        let mut gx = vec![S::ZERO; n * c * hw];
        match mode {
            PoolMode::Max => {
                for (o, &g) in gout.iter().enumerate() {
                    gx[argmax[o] as usize] += g;
                }
            }
            PoolMode::Avg => {
                let inv = S::of(1.0 / hw as f64);
                for nc in 0..n * c {
                    let g = gout[nc] * inv;
                    for v in &mut gx[nc * hw..(nc + 1) * hw] {
                        *v += g;
                    }
                }
            }
        }
        self.accumulate(input, gx);
    }

    fn backward_channel_l2(&mut self, idx: usize, gout: &[S], input: VarId, denoms: &[S]) {
        let (n, c, h, w) = self.value(input).dims4().unwrap();
        let hw = h * w;
        let y = self.nodes[idx].tensor.data();
        let mut gx = vec![S::ZERO; n * c * hw];
        for ni in 0..n {
            for p in 0..hw {
                let denom = denoms[ni * hw + p];
                // dot = <g, y> per pixel; y holds x/denom.
                let mut dot = S::ZERO;
                for ci in 0..c {
                    let at = (ni * c + ci) * hw + p;
                    dot += gout[at] * y[at];
                }
                // Unit-norm case: (g - y <g,y>) / norm. Below eps the map is
                // linear division by eps, so the correction term vanishes.
                let ss: S = (0..c)
                    .map(|ci| {
                        let v = y[(ni * c + ci) * hw + p];
                        v * v
                    })
                    .sum();
                let normalized = ss > S::of(0.5); // ||y|| is 1 when norm >= eps, else < 1
                for ci in 0..c {
                    let at = (ni * c + ci) * hw + p;
                    gx[at] = if normalized {
                        (gout[at] - y[at] * dot) / denom
                    } else {
                        gout[at] / denom
                    };
                }
            }
        }
        self.accumulate(input, gx);
    }

    fn backward_upsample(&mut self, gout: &[S], input: VarId) {
        let (n, c, h, w) = self.value(input).dims4().unwrap();
        let (h2, w2) = (2 * h, 2 * w);
        let mut gx = vec![S::ZERO; n * c * h * w];
        let ycoord: Vec<(usize, usize, f64)> = (0..h2).map(|d| src_lerp(d, h)).collect();
        let xcoord: Vec<(usize, usize, f64)> = (0..w2).map(|d| src_lerp(d, w)).collect();
        for nc in 0..n * c {
            let gplane = &gout[nc * h2 * w2..(nc + 1) * h2 * w2];
            let xplane = &mut gx[nc * h * w..(nc + 1) * h * w];
            for (dy, &(y0, y1, ty)) in ycoord.iter().enumerate() {
                for (dx, &(x0, x1, tx)) in xcoord.iter().enumerate() {
                    let g = gplane[dy * w2 + dx];
                    xplane[y0 * w + x0] += g * S::of((1.0 - ty) * (1.0 - tx));
                    xplane[y0 * w + x1] += g * S::of((1.0 - ty) * tx);
                    xplane[y1 * w + x0] += g * S::of(ty * (1.0 - tx));
                    xplane[y1 * w + x1] += g * S::of(ty * tx);
                }
            }
        }
        self.accumulate(input, gx);
    }

    fn backward_concat(&mut self, idx: usize, gout: &[S], inputs: &[VarId], axis: usize) {
        let out_shape = self.nodes[idx].tensor.shape().to_vec();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let axis_total = out_shape[axis];
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.shape_of(id)[axis];
            let block = s_axis * inner;
            let mut delta = vec![S::ZERO; outer * block];
            for o in 0..outer {
                let src = (o * axis_total + offset) * inner;
                delta[o * block..(o + 1) * block].copy_from_slice(&gout[src..src + block]);
            }
            self.accumulate(id, delta);
            offset += s_axis;
        }
    }

    fn backward_narrow(&mut self, gout: &[S], input: VarId, axis: usize, start: usize, len: usize) {
        let shape = self.shape_of(input).to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut gx = vec![S::ZERO; self.nodes[input.0].tensor.len()];
        for o in 0..outer {
            let dst = (o * shape[axis] + start) * inner;
            gx[dst..dst + len * inner].copy_from_slice(&gout[o * len * inner..(o + 1) * len * inner]);
        }
        self.accumulate(input, gx);
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_batchnorm(
        &mut self,
        gout: &[S],
        input: VarId,
        gamma: VarId,
        beta: VarId,
        training: bool,
        invstd: &[S],
        xhat: &[S],
    ) {
        let (n, c, h, w) = self.value(input).dims4().unwrap();
        let hw = h * w;
        let m = n * hw;
        let gdat = self.data_of(gamma).to_vec();

        let mut sum_g = vec![S::ZERO; c];
        let mut sum_gx = vec![S::ZERO; c];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    sum_g[ci] += gout[base + p];
                    sum_gx[ci] += gout[base + p] * xhat[base + p];
                }
            }
        }
        if self.requires(beta) {
            self.accumulate(beta, sum_g.clone());
        }
        if self.requires(gamma) {
            self.accumulate(gamma, sum_gx.clone());
        }
        if self.requires(input) {
            let mut gx = vec![S::ZERO; n * c * hw];
            let inv_m = S::of(1.0 / m as f64);
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * hw;
                    let scale = gdat[ci] * invstd[ci];
                    if training {
                        let mg = sum_g[ci] * inv_m;
                        let mgx = sum_gx[ci] * inv_m;
                        for p in 0..hw {
                            gx[base + p] = scale * (gout[base + p] - mg - xhat[base + p] * mgx);
                        }
                    } else {
                        for p in 0..hw {
                            gx[base + p] = scale * gout[base + p];
                        }
                    }
                }
            }
            self.accumulate(input, gx);
        }
    }

    fn backward_channel_reduce(
        &mut self,
        gout: &[S],
        input: VarId,
        kind: ChanReduce,
        argmax: &[u32],
    ) {
        let (n, c, h, w) = self.value(input).dims4().unwrap();
        let hw = h * w;
        let mut gx = vec![S::ZERO; n * c * hw];
        match kind {
            ChanReduce::Sum => {
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for p in 0..hw {
                            gx[base + p] += gout[ni * hw + p];
                        }
                    }
                }
            }
            ChanReduce::Mean => {
                let inv = S::of(1.0 / c as f64);
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * hw;
                        for p in 0..hw {
                            gx[base + p] += gout[ni * hw + p] * inv;
                        }
                    }
                }
            }
            ChanReduce::Max => {
                for (o, &g) in gout.iter().enumerate() {
                    gx[argmax[o] as usize] += g;
                }
            }
        }
        self.accumulate(input, gx);
    }

    fn backward_binary(&mut self, gout: &[S], kind: BinKind, a: VarId, b: VarId) {
        let bc = Bcast::new(self.shape_of(a), self.shape_of(b)).unwrap();
        let da = self.data_of(a);
        let db = self.data_of(b);
        let need_a = self.requires(a);
        let need_b = self.requires(b);
        let mut ga = vec![S::ZERO; da.len()];
        let mut gb = vec![S::ZERO; db.len()];
        bc.for_each(|o, ia, ib| {
            let g = gout[o];
            match kind {
                BinKind::Add => {
                    if need_a {
                        ga[ia] += g;
                    }
                    if need_b {
                        gb[ib] += g;
                    }
                }
                BinKind::Sub => {
                    if need_a {
                        ga[ia] += g;
                    }
                    if need_b {
                        gb[ib] += -g;
                    }
                }
                BinKind::Mul => {
                    if need_a {
                        ga[ia] += g * db[ib];
                    }
                    if need_b {
                        gb[ib] += g * da[ia];
                    }
                }
                BinKind::Div => {
                    let bv = db[ib];
                    if need_a {
                        ga[ia] += g / bv;
                    }
                    if need_b {
                        gb[ib] += -g * da[ia] / (bv * bv);
                    }
                }
            }
        });
        if need_a {
            self.accumulate(a, ga);
        }
        if need_b {
            self.accumulate(b, gb);
        }
    }
}

#[inline]
fn sigmoid_stable<S: Scalar>(z: S) -> S {
    let y = if z >= S::ZERO {
        S::ONE / (S::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::ONE + e)
    };
    // saturated tails snap to the nearest representable value strictly
    // inside (0, 1)
    y.maxs(S::TINY).mins(S::ONE_MINUS_ULP)
}

/// Source coordinates and blend weight for 2x bilinear interpolation
/// (align-corners false): src = dst/2 - 0.25, clamped to the image.
fn src_lerp(dst: usize, size: usize) -> (usize, usize, f64) {
    let src = (dst as f64) * 0.5 - 0.25;
    let src = src.clamp(0.0, (size - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, src - i0 as f64)
}

/// Same-rank broadcasting: each dim must match or be 1 on one side.
struct Bcast {
    out_shape: Vec<usize>,
    stride_a: Vec<usize>,
    stride_b: Vec<usize>,
}

impl Bcast {
    fn new(a: &[usize], b: &[usize]) -> Option<Bcast> {
        if a.len() != b.len() {
            return None;
        }
        let rank = a.len();
        let mut out_shape = vec![0usize; rank];
        for d in 0..rank {
            out_shape[d] = if a[d] == b[d] {
                a[d]
            } else if a[d] == 1 {
                b[d]
            } else if b[d] == 1 {
                a[d]
            } else {
                return None;
            };
        }
        let full = |shape: &[usize]| -> Vec<usize> {
            let mut s = vec![1usize; rank];
            for d in (0..rank.saturating_sub(1)).rev() {
                s[d] = s[d + 1] * shape[d + 1];
            }
            s
        };
        let mut stride_a = full(a);
        let mut stride_b = full(b);
        for d in 0..rank {
            if a[d] == 1 && out_shape[d] != 1 {
                stride_a[d] = 0;
            }
            if b[d] == 1 && out_shape[d] != 1 {
                stride_b[d] = 0;
            }
        }
        Some(Bcast {
            out_shape,
            stride_a,
            stride_b,
        })
    }

    fn len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Visit every output element with its flat (out, a, b) offsets.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let rank = self.out_shape.len();
        let total = self.len();
        if total == 0 {
            return;
        }
        let mut idx = vec![0usize; rank];
        let (mut oa, mut ob) = (0usize, 0usize);
        for o in 0..total {
            f(o, oa, ob);
            // odometer increment from the innermost dim
            for d in (0..rank).rev() {
                idx[d] += 1;
                oa += self.stride_a[d];
                ob += self.stride_b[d];
                if idx[d] < self.out_shape[d] {
                    break;
                }
                oa -= self.stride_a[d] * idx[d];
                ob -= self.stride_b[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t4(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data)
    }

    // sliding-window cross-correlation, the independent conv oracle
    #[allow(clippy::too_many_arguments)]
    fn conv_oracle(
        x: &[f64],
        w: &[f64],
        b: Option<&[f64]>,
        n: usize,
        cin: usize,
        h: usize,
        wd: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * cout * ho * wo];
        for ni in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.map(|b| b[co]).unwrap_or(0.0);
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                        acc += x[((ni * cin + ci) * h + iy as usize) * wd
                                            + ix as usize]
                                            * w[((co * cin + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((ni * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_one_by_one_kernel_scales() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.leaf(t4(&[1, 1, 1, 1], vec![2.0]));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert!(tape.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_padded_ones_kernel_matches_sliding_window_oracle() {
        let xd: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let wd = vec![1.0; 9];
        let expect = conv_oracle(&xd, &wd, None, 1, 1, 3, 3, 1, 3, 1, 1);
        // center element sums the whole input
        assert_eq!(expect[4], 45.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[1, 1, 3, 3], xd));
        let w = tape.leaf(t4(&[1, 1, 3, 3], wd));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), expect.as_slice());
    }

    #[test]
    fn conv2d_zero_input_gives_zero_output() {
        let mut rng = Rng::from_seed(1);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3, 5, 5]));
        let w = tape.leaf(Tensor::uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut rng));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_random_case_matches_oracle_with_stride_and_bias() {
        let mut rng = Rng::from_seed(2);
        let (n, cin, h, w, cout, k, stride, pad) = (2, 3, 7, 6, 4, 3, 2, 1);
        let xt = Tensor::<f64>::uniform(&[n, cin, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[cout, cin, k, k], -1.0, 1.0, &mut rng);
        let bt = Tensor::<f64>::uniform(&[cout], -1.0, 1.0, &mut rng);
        let expect = conv_oracle(
            xt.data(),
            wt.data(),
            Some(bt.data()),
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
        );
        let mut tape = Tape::new();
        let x = tape.leaf(xt);
        let wv = tape.leaf(wt);
        let b = tape.leaf(bt);
        let y = tape.conv2d(x, wv, Some(b), stride, pad).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_shape_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        let w3 = tape.leaf(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(tape.conv2d(x, w3, None, 1, 1).is_err()); // channel mismatch
        let w_big = tape.leaf(Tensor::zeros(&[1, 2, 7, 7]));
        assert!(tape.conv2d(x, w_big, None, 1, 0).is_err()); // kernel larger than input
    }

    #[test]
    fn linear_identity_and_hand_computed_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[1, 2], vec![1.0, 2.0]));
        let ident = tape.leaf(t4(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let zero_b = tape.leaf(Tensor::zeros(&[2]));
        let y = tape.linear(x, ident, zero_b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let w = tape.leaf(t4(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]));
        let y = tape.linear(x, w, zero_b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0]);

        let zero_w = tape.leaf(Tensor::zeros(&[2, 2]));
        let b = tape.leaf(t4(&[2], vec![0.5, -0.5]));
        let x2 = tape.leaf(t4(&[3, 2], vec![9.0; 6]));
        let y = tape.linear(x2, zero_w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -0.5, 0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn pool2d_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let mx = tape.pool2d(x, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(tape.value(mx).data(), &[4.0]);
        let avg = tape.pool2d(x, PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(tape.value(avg).data(), &[2.5]);

        let ramp = tape.leaf(t4(&[1, 1, 4, 4], (0..16).map(|v| v as f64).collect()));
        let y = tape.pool2d(ramp, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 7.0, 13.0, 15.0]);

        let small = tape.leaf(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.pool2d(small, PoolMode::Max, 3, 1).is_err());
    }

    #[test]
    fn max_pool_gradient_routes_to_first_argmax_on_ties() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[1, 1, 2, 2], vec![7.0, 7.0, 7.0, 7.0]).requires_grad(true));
        let y = tape.pool2d(x, PoolMode::Max, 2, 2).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn global_pool_examples_and_loop_oracle() {
        let mut tape = Tape::<f64>::new();
        let c = tape.leaf(Tensor::full(&[1, 2, 3, 3], 0.75));
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let y = tape.global_pool(c, mode).unwrap();
            assert_eq!(tape.value(y).shape(), &[1, 2, 1, 1]);
            assert!(tape.value(y).data().iter().all(|&v| v == 0.75));
        }
        let x = tape.leaf(t4(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let avg = tape.global_pool(x, PoolMode::Avg).unwrap();
        assert_eq!(tape.value(avg).data(), &[2.5]);
        let mx = tape.global_pool(x, PoolMode::Max).unwrap();
        assert_eq!(tape.value(mx).data(), &[4.0]);

        let mut rng = Rng::from_seed(3);
        let rt = Tensor::<f64>::uniform(&[1, 3, 4, 4], -2.0, 2.0, &mut rng);
        let r = tape.leaf(rt.clone());
        let avg = tape.global_pool(r, PoolMode::Avg).unwrap();
        let mx = tape.global_pool(r, PoolMode::Max).unwrap();
        for ci in 0..3 {
            let plane = &rt.data()[ci * 16..(ci + 1) * 16];
            let want_avg: f64 = plane.iter().sum::<f64>() / 16.0;
            let want_max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((tape.value(avg).data()[ci] - want_avg).abs() < 1e-12);
            assert_eq!(tape.value(mx).data()[ci], want_max);
        }
    }

    #[test]
    fn channel_l2_normalize_examples() {
        let mut tape = Tape::<f64>::new();
        // 3-4-5 triangle per pixel
        let x = tape.leaf(t4(&[1, 2, 1, 1], vec![3.0, 4.0]));
        let y = tape.channel_l2_normalize(x, 1e-12).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - 0.6).abs() < 1e-12);
        assert!((got[1] - 0.8).abs() < 1e-12);

        let z = tape.leaf(Tensor::zeros(&[1, 4, 2, 2]));
        let y = tape.channel_l2_normalize(z, 1e-12).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let mut rng = Rng::from_seed(4);
        let r = tape.leaf(Tensor::uniform(&[2, 8, 3, 3], -1.0, 1.0, &mut rng));
        let y = tape.channel_l2_normalize(r, 1e-12).unwrap();
        let d = tape.value(y).data();
        for ni in 0..2 {
            for p in 0..9 {
                let norm: f64 = (0..8)
                    .map(|ci| {
                        let v = d[(ni * 8 + ci) * 9 + p];
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt();
                assert!((norm - 1.0).abs() < 1e-6, "norm {norm}");
            }
        }
    }

    #[test]
    fn upsample_examples() {
        let mut tape = Tape::<f64>::new();
        let c = tape.leaf(Tensor::full(&[1, 1, 3, 2], 7.0));
        let y = tape.upsample2x_bilinear(c).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 6, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));

        let one = tape.leaf(t4(&[1, 1, 1, 1], vec![3.5]));
        let y = tape.upsample2x_bilinear(one).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5; 4]);

        let row = tape.leaf(t4(&[1, 1, 1, 2], vec![0.0, 1.0]));
        let y = tape.upsample2x_bilinear(row).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn activation_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[1, 4], vec![0.0, -1.0, 2.0, 50.0]));
        let s = tape.sigmoid(x);
        let sv = tape.value(s).data();
        assert_eq!(sv[0], 0.5);
        assert!(sv.iter().all(|&v| v > 0.0 && v < 1.0));
        // high-precision oracle for the saturated tails
        let want_hi = 1.0 / (1.0 + (-50.0f64).exp());
        assert!((sv[3] - want_hi).abs() < 1e-15);
        let xneg = tape.leaf(t4(&[1, 1], vec![-50.0]));
        let sneg = tape.sigmoid(xneg);
        let want_lo = (-50.0f64).exp() / (1.0 + (-50.0f64).exp());
        assert!((tape.value(sneg).data()[0] - want_lo).abs() < 1e-15);
        assert!(tape.value(sneg).data()[0] > 0.0);

        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0, 50.0]);
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t4(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()));
        let single = tape.concat(&[a], 1).unwrap();
        assert_eq!(tape.value(single).data(), tape.value(a).data());

        let b = tape.leaf(t4(&[1, 1, 2, 2], vec![10.0, 11.0, 12.0, 13.0]));
        let cat = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(cat).shape(), &[1, 3, 2, 2]);
        assert_eq!(
            tape.value(cat).data(),
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 10.0, 11.0, 12.0, 13.0]
        );
        let parts = tape.split(cat, 1, &[2, 1]).unwrap();
        assert_eq!(tape.value(parts[0]).data(), tape.value(a).data());
        assert_eq!(tape.value(parts[1]).data(), tape.value(b).data());

        let c = tape.leaf(Tensor::zeros(&[1, 2, 3, 2]));
        assert!(tape.concat(&[a, c], 1).is_err());
    }

    #[test]
    fn concat_gradient_splits_back() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(t4(&[1, 1, 1, 2], vec![1.0, 2.0]).requires_grad(true));
        let b = tape.leaf(t4(&[1, 1, 1, 2], vec![3.0, 4.0]).requires_grad(true));
        let cat = tape.concat(&[a, b], 1).unwrap();
        let w = tape.leaf(t4(&[1, 2, 1, 2], vec![1.0, 10.0, 100.0, 1000.0]));
        let prod = tape.mul(cat, w).unwrap();
        let s = tape.sum_all(prod);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 10.0]);
        assert_eq!(tape.grad(b).unwrap(), &[100.0, 1000.0]);
    }

    #[test]
    fn batchnorm_training_and_eval_modes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[2, 1, 2, 2], 5.0));
        let gamma = tape.leaf(Tensor::full(&[1], 1.0));
        let beta = tape.leaf(Tensor::zeros(&[1]));
        let mut rm = Tensor::zeros(&[1]);
        let mut rv = Tensor::full(&[1], 1.0);
        // constant channel normalizes to ~0
        let y = tape
            .batchnorm2d(x, gamma, beta, &mut rm, &mut rv, true, 0.1, 1e-5)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v.abs() < 1e-2));
        // momentum 0.1 pulls the running stats toward the batch
        assert!((rm.data()[0] - 0.5).abs() < 1e-12);
        assert!((rv.data()[0] - 0.9).abs() < 1e-12);

        // gamma = 0 pins the output at beta
        let g0 = tape.leaf(Tensor::zeros(&[1]));
        let b7 = tape.leaf(Tensor::full(&[1], 7.0));
        let y = tape
            .batchnorm2d(x, g0, b7, &mut rm, &mut rv, true, 0.1, 1e-5)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 7.0));

        // eval mode uses the running stats, not the batch
        let mut rm = Tensor::from_vec(&[1], vec![1.0]);
        let mut rv = Tensor::from_vec(&[1], vec![4.0]);
        let y = tape
            .batchnorm2d(x, gamma, beta, &mut rm, &mut rv, false, 0.1, 1e-5)
            .unwrap();
        for &v in tape.value(y).data() {
            assert!((v - (5.0 - 1.0) / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        }
        assert_eq!(rm.data(), &[1.0]); // untouched in eval mode
    }

    #[test]
    fn batchnorm_output_moments_match_gamma_beta() {
        let mut rng = Rng::from_seed(5);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::uniform(&[4, 3, 8, 8], -2.0, 3.0, &mut rng));
        let gscale = [1.5, 0.5, 2.0];
        let bshift = [0.0, -1.0, 0.25];
        let gamma = tape.leaf(t4(&[3], gscale.to_vec()));
        let beta = tape.leaf(t4(&[3], bshift.to_vec()));
        let mut rm = Tensor::zeros(&[3]);
        let mut rv = Tensor::full(&[3], 1.0);
        let y = tape
            .batchnorm2d(x, gamma, beta, &mut rm, &mut rv, true, 0.1, 1e-5)
            .unwrap();
        let d = tape.value(y).data();
        let m = 4 * 8 * 8;
        for ci in 0..3 {
            let mut vals = Vec::with_capacity(m);
            for ni in 0..4 {
                let base = (ni * 3 + ci) * 64;
                vals.extend_from_slice(&d[base..base + 64]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / m as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            assert!((mean - bshift[ci]).abs() < 1e-4, "mean {mean}");
            assert!((var - gscale[ci] * gscale[ci]).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn backward_accumulates_across_fanout() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0).requires_grad(true));
        let doubled = tape.add(x, x).unwrap();
        let s = tape.sum_all(doubled);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached_losses() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t4(&[2], vec![1.0, 2.0]).requires_grad(true));
        let y = tape.relu(x);
        assert!(tape.backward(y).is_err()); // non-scalar

        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(1.0));
        let s = tape.sum_all(c);
        assert!(tape.backward(s).is_err()); // nothing requires grad
    }

    #[test]
    fn backward_can_only_run_once_per_tape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0).requires_grad(true));
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum_all(y);
        tape.backward(s).unwrap();
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn forward_is_bit_identical_across_repeated_calls() {
        let mut rng = Rng::from_seed(6);
        let xt = Tensor::<f64>::uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng);
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(xt.clone());
            let w = tape.leaf(wt.clone());
            let c = tape.conv2d(x, w, None, 1, 1).unwrap();
            let s = tape.sigmoid(c);
            let n = tape.channel_l2_normalize(s, 1e-12).unwrap();
            let u = tape.upsample2x_bilinear(n).unwrap();
            tape.value(u).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn broadcast_binary_ops_match_manual_expansion() {
        let mut tape = Tape::<f64>::new();
        // [N,C,1,1] gate against [N,C,H,W]
        let x = tape.leaf(t4(&[1, 2, 2, 2], (1..=8).map(|v| v as f64).collect()));
        let gate = tape.leaf(t4(&[1, 2, 1, 1], vec![2.0, 10.0]));
        let y = tape.mul(x, gate).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[2.0, 4.0, 6.0, 8.0, 50.0, 60.0, 70.0, 80.0]
        );
        // [N,1,H,W] map against [N,C,H,W]
        let map = tape.leaf(t4(&[1, 1, 2, 2], vec![1.0, 0.0, 0.5, 2.0]));
        let z = tape.mul(x, map).unwrap();
        assert_eq!(
            tape.value(z).data(),
            &[1.0, 0.0, 1.5, 8.0, 5.0, 0.0, 3.5, 16.0]
        );
        // incompatible
        let bad = tape.leaf(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(tape.mul(x, bad).is_err());
    }

    #[test]
    fn division_gradient_is_correct() {
        let report = crate::tensor::finite_difference_check(
            |tape, ids| {
                let q = tape.div(ids[0], ids[1])?;
                Ok(tape.mean_all(q))
            },
            &[
                Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).requires_grad(true),
                Tensor::from_vec(&[1, 1, 2, 2], vec![2.0, 4.0, -1.5, 3.0]).requires_grad(true),
            ],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }

    #[test]
    fn broadcast_gradient_reduces_over_expanded_axes() {
        let report = crate::tensor::finite_difference_check(
            |tape, ids| {
                let y = tape.mul(ids[0], ids[1])?;
                let z = tape.add(y, ids[2])?;
                Ok(tape.mean_all(z))
            },
            &[
                Tensor::from_vec(&[2, 3, 2, 2], (0..24).map(|v| 0.1 * v as f64).collect())
                    .requires_grad(true),
                Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(|v| 0.3 + v as f64 * 0.05).collect())
                    .requires_grad(true),
                Tensor::from_vec(&[2, 3, 1, 1], (0..6).map(|v| v as f64 * 0.2).collect())
                    .requires_grad(true),
            ],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }
}
