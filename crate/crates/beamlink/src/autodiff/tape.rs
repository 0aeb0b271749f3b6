use std::sync::Arc;

use super::conv;
use super::cxops;
use super::demap::{self, SoftDemapTables};
use super::gather::GatherPlan;
use super::tensor::{strides_of, Real, Tensor};
use crate::error::{Error, Result};

/// Index of a recorded tensor on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

/// Normalization statistics source for `channel_norm`.
#[derive(Debug, Clone)]
pub enum NormStats<R> {
    /// Compute mean/variance from the input's spatial dims (training mode).
    FromBatch,
    /// Use the provided per-channel mean and variance (evaluation mode).
    Fixed(Vec<R>, Vec<R>),
}

#[derive(Debug, Clone)]
pub(crate) enum Op<R: Real> {
    Leaf,
    Add { a: VarId, b: VarId },
    Sub { a: VarId, b: VarId },
    Mul { a: VarId, b: VarId },
    Affine { x: VarId, scale: R },
    ScalarMul { s: VarId, x: VarId },
    Relu { x: VarId },
    Sigmoid { x: VarId },
    Softplus { x: VarId },
    Log { x: VarId },
    Exp { x: VarId },
    Sqrt { x: VarId },
    Reciprocal { x: VarId },
    Clamp { x: VarId, lo: R, hi: R },
    AbsSquared { x: VarId },
    Matmul { a: VarId, b: VarId, m: usize, k: usize, n: usize },
    ComplexMatmul { a: VarId, b: VarId, batch: usize, a_batched: bool, b_batched: bool, m: usize, k: usize, n: usize },
    Hermitian { x: VarId, batch: usize, m: usize, n: usize },
    Conj { x: VarId },
    ComplexMulElem { a: VarId, b: VarId },
    ComplexScaleRows { m: VarId, s: VarId, batch: usize, rows: usize, cols: usize },
    ComplexReciprocal { x: VarId },
    DiagPart { x: VarId, batch: usize, n: usize },
    SmallComplexInverse { x: VarId, batch: usize, n: usize },
    Conv2dDepthwise { x: VarId, kernel: VarId, bias: VarId, dims: conv::ConvDims },
    Conv2dPointwise { x: VarId, kernel: VarId, bias: VarId, rows: usize, c_in: usize, c_out: usize },
    ChannelNorm { x: VarId, gamma: VarId, beta: VarId, mean: Vec<R>, inv_std: Vec<R>, from_batch: bool },
    Concat { inputs: Vec<VarId>, axis: usize },
    Reshape { x: VarId },
    Transpose { x: VarId, perm: Vec<usize> },
    ReduceSum { x: VarId },
    ReduceMean { x: VarId },
    ReduceSumLast { x: VarId, last: usize },
    IndexSelectBatch { x: VarId, indices: Arc<Vec<usize>>, row: usize },
    GatherLinear { x: VarId, plan: Arc<GatherPlan> },
    QamLlr { x: VarId, sigma2: VarId, tables: Arc<SoftDemapTables> },
}

impl<R: Real> Op<R> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Affine { .. } => "affine",
            Op::ScalarMul { .. } => "scalar_mul",
            Op::Relu { .. } => "relu",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Softplus { .. } => "softplus",
            Op::Log { .. } => "log",
            Op::Exp { .. } => "exp",
            Op::Sqrt { .. } => "sqrt",
            Op::Reciprocal { .. } => "reciprocal",
            Op::Clamp { .. } => "clamp",
            Op::AbsSquared { .. } => "abs_squared",
            Op::Matmul { .. } => "matmul",
            Op::ComplexMatmul { .. } => "complex_matmul",
            Op::Hermitian { .. } => "hermitian",
            Op::Conj { .. } => "conj",
            Op::ComplexMulElem { .. } => "complex_mul_elem",
            Op::ComplexScaleRows { .. } => "complex_scale_rows",
            Op::ComplexReciprocal { .. } => "complex_reciprocal",
            Op::DiagPart { .. } => "diag_part",
            Op::SmallComplexInverse { .. } => "small_complex_inverse",
            Op::Conv2dDepthwise { .. } => "conv2d_depthwise",
            Op::Conv2dPointwise { .. } => "conv2d_pointwise",
            Op::ChannelNorm { .. } => "channel_norm",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::Transpose { .. } => "transpose",
            Op::ReduceSum { .. } => "reduce_sum",
            Op::ReduceMean { .. } => "reduce_mean",
            Op::ReduceSumLast { .. } => "reduce_sum_last",
            Op::IndexSelectBatch { .. } => "index_select_batch",
            Op::GatherLinear { .. } => "gather_linear",
            Op::QamLlr { .. } => "qam_llr",
        }
    }
}

struct Node<R: Real> {
    op: Op<R>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by tape node.
#[derive(Debug)]
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<R>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: VarId) -> Option<Tensor<R>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Wengert tape: records every op during the forward pass and replays the
/// recorded list backwards to accumulate gradients.
///
/// Tapes are single-threaded; independent tapes may live on separate threads.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
    values: Vec<Tensor<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<R> {
        &self.values[id.0]
    }

    pub fn shape(&self, id: VarId) -> &[usize] {
        self.values[id.0].shape()
    }

    fn push(&mut self, op: Op<R>, value: Tensor<R>, requires_grad: bool) -> VarId {
        let id = VarId(self.nodes.len());
        self.nodes.push(Node { op, requires_grad });
        self.values.push(value);
        id
    }

    fn needs_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Record a differentiable leaf (model parameters, chain inputs).
    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> VarId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Record a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor<R>) -> VarId {
        self.push(Op::Leaf, value, false)
    }

    // ---- elementwise -----------------------------------------------------

    fn binary_same_shape(&mut self, op_name: &'static str, a: VarId, b: VarId) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(
                op_name,
                format!("operand shapes {:?} vs {:?}", sa, sb),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("add", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.shape(a).to_vec().as_slice(), data);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::from_vec(self.shape(a).to_vec().as_slice(), data);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Sub { a, b }, value, rg))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::from_vec(self.shape(a).to_vec().as_slice(), data);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Mul { a, b }, value, rg))
    }

    /// y = scale * x (constant scale).
    pub fn scale(&mut self, x: VarId, scale: R) -> VarId {
        let value = self.values[x.0].map(|v| v * scale);
        let rg = self.needs_grad(&[x]);
        self.push(Op::Affine { x, scale }, value, rg)
    }

    /// y = scale * x + shift (constant scale and shift; the shift drops out
    /// of the gradient).
    pub fn affine(&mut self, x: VarId, scale: R, shift: R) -> VarId {
        let value = self.values[x.0].map(|v| v * scale + shift);
        let rg = self.needs_grad(&[x]);
        self.push(Op::Affine { x, scale }, value, rg)
    }

    /// y = s * x where `s` is a scalar node on the tape.
    pub fn scalar_mul(&mut self, s: VarId, x: VarId) -> Result<VarId> {
        if self.values[s.0].numel() != 1 {
            return Err(shape_err(
                "scalar_mul",
                format!("scale operand has shape {:?}, expected scalar", self.shape(s)),
            ));
        }
        let sv = self.values[s.0].data()[0];
        let value = self.values[x.0].map(|v| v * sv);
        let rg = self.needs_grad(&[s, x]);
        Ok(self.push(Op::ScalarMul { s, x }, value, rg))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(|v| if v > R::zero() { v } else { R::zero() });
        let rg = self.needs_grad(&[x]);
        self.push(Op::Relu { x }, value, rg)
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(sigmoid_scalar);
        let rg = self.needs_grad(&[x]);
        self.push(Op::Sigmoid { x }, value, rg)
    }

    pub fn softplus(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(softplus_scalar);
        let rg = self.needs_grad(&[x]);
        self.push(Op::Softplus { x }, value, rg)
    }

    pub fn log(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(|v| v.ln());
        let rg = self.needs_grad(&[x]);
        self.push(Op::Log { x }, value, rg)
    }

    pub fn exp(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(|v| v.exp());
        let rg = self.needs_grad(&[x]);
        self.push(Op::Exp { x }, value, rg)
    }

    pub fn sqrt(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(|v| v.sqrt());
        let rg = self.needs_grad(&[x]);
        self.push(Op::Sqrt { x }, value, rg)
    }

    pub fn reciprocal(&mut self, x: VarId) -> VarId {
        let value = self.values[x.0].map(|v| v.recip());
        let rg = self.needs_grad(&[x]);
        self.push(Op::Reciprocal { x }, value, rg)
    }

    pub fn clamp(&mut self, x: VarId, lo: R, hi: R) -> VarId {
        let value = self.values[x.0].map(|v| v.max(lo).min(hi));
        let rg = self.needs_grad(&[x]);
        self.push(Op::Clamp { x, lo, hi }, value, rg)
    }

    /// Complex squared magnitude: [.., 2] -> [..].
    pub fn abs_squared(&mut self, x: VarId) -> Result<VarId> {
        let shape = self.shape(x).to_vec();
        if shape.last() != Some(&2) {
            return Err(shape_err(
                "abs_squared",
                format!("expected trailing complex axis of 2, got {:?}", shape),
            ));
        }
        let out_shape = &shape[..shape.len() - 1];
        let xd = self.values[x.0].data();
        let data = (0..xd.len() / 2)
            .map(|i| xd[2 * i] * xd[2 * i] + xd[2 * i + 1] * xd[2 * i + 1])
            .collect();
        let value = Tensor::from_vec(out_shape, data);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::AbsSquared { x }, value, rg))
    }

    // ---- linear algebra --------------------------------------------------

    /// Real 2-D matrix product [m,k] x [k,n] -> [m,n].
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(
                "matmul",
                format!("operand shapes {:?} vs {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![R::zero(); m * n];
        R::gemm(m, k, n, self.values[a.0].data(), self.values[b.0].data(), &mut out);
        let value = Tensor::from_vec(&[m, n], out);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::Matmul { a, b, m, k, n }, value, rg))
    }

    /// Complex batched matmul on the trailing-2 representation.
    ///
    /// a: [batch.., m, k, 2], b: [batch.., k, n, 2]; one operand may omit the
    /// batch dims entirely (leading-batch expansion).
    pub fn complex_matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let check = |s: &[usize]| s.len() >= 3 && *s.last().unwrap() == 2;
        if !check(&sa) || !check(&sb) {
            return Err(shape_err(
                "complex_matmul",
                format!("operands must be [.., m, n, 2]; got {:?} vs {:?}", sa, sb),
            ));
        }
        let (m, ka) = (sa[sa.len() - 3], sa[sa.len() - 2]);
        let (kb, n) = (sb[sb.len() - 3], sb[sb.len() - 2]);
        if ka != kb {
            return Err(shape_err(
                "complex_matmul",
                format!("inner dims differ: {:?} vs {:?}", sa, sb),
            ));
        }
        let batch_a: usize = sa[..sa.len() - 3].iter().product();
        let batch_b: usize = sb[..sb.len() - 3].iter().product();
        let a_batched = sa.len() > 3;
        let b_batched = sb.len() > 3;
        let (batch, batch_dims) = if a_batched && b_batched {
            if sa[..sa.len() - 3] != sb[..sb.len() - 3] {
                return Err(shape_err(
                    "complex_matmul",
                    format!("batch dims differ: {:?} vs {:?}", sa, sb),
                ));
            }
            (batch_a, sa[..sa.len() - 3].to_vec())
        } else if a_batched {
            (batch_a, sa[..sa.len() - 3].to_vec())
        } else if b_batched {
            (batch_b, sb[..sb.len() - 3].to_vec())
        } else {
            (1, vec![])
        };
        let value = cxops::matmul_fwd(
            self.values[a.0].data(),
            self.values[b.0].data(),
            batch,
            a_batched,
            b_batched,
            m,
            ka,
            n,
        );
        let mut out_shape = batch_dims;
        out_shape.extend_from_slice(&[m, n, 2]);
        let value = Tensor::from_vec(&out_shape, value);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(
            Op::ComplexMatmul { a, b, batch, a_batched, b_batched, m, k: ka, n },
            value,
            rg,
        ))
    }

    /// Conjugate transpose of the trailing matrix dims: [.., m, n, 2] -> [.., n, m, 2].
    pub fn hermitian(&mut self, x: VarId) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 || *s.last().unwrap() != 2 {
            return Err(shape_err(
                "hermitian",
                format!("expected [.., m, n, 2], got {:?}", s),
            ));
        }
        let (m, n) = (s[s.len() - 3], s[s.len() - 2]);
        let batch: usize = s[..s.len() - 3].iter().product();
        let out = cxops::hermitian_fwd(self.values[x.0].data(), batch, m, n);
        let mut out_shape = s[..s.len() - 3].to_vec();
        out_shape.extend_from_slice(&[n, m, 2]);
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::Hermitian { x, batch, m, n }, value, rg))
    }

    /// Elementwise complex conjugate on the trailing-2 representation.
    pub fn conj(&mut self, x: VarId) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.last() != Some(&2) {
            return Err(shape_err("conj", format!("expected trailing 2, got {:?}", s)));
        }
        let xd = self.values[x.0].data();
        let mut data = xd.to_vec();
        for i in 0..data.len() / 2 {
            data[2 * i + 1] = -data[2 * i + 1];
        }
        let value = Tensor::from_vec(&s, data);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::Conj { x }, value, rg))
    }

    /// Elementwise complex product of same-shape operands.
    pub fn complex_mul_elem(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_same_shape("complex_mul_elem", a, b)?;
        let s = self.shape(a).to_vec();
        if s.last() != Some(&2) {
            return Err(shape_err(
                "complex_mul_elem",
                format!("expected trailing 2, got {:?}", s),
            ));
        }
        let out = cxops::mul_elem_fwd(self.values[a.0].data(), self.values[b.0].data());
        let value = Tensor::from_vec(&s, out);
        let rg = self.needs_grad(&[a, b]);
        Ok(self.push(Op::ComplexMulElem { a, b }, value, rg))
    }

    /// Scale matrix rows by per-row complex factors:
    /// m: [.., rows, cols, 2], s: [.., rows, 2].
    pub fn complex_scale_rows(&mut self, m: VarId, s: VarId) -> Result<VarId> {
        let (sm, ss) = (self.shape(m).to_vec(), self.shape(s).to_vec());
        if sm.len() < 3 || *sm.last().unwrap() != 2 || *ss.last().unwrap() != 2 {
            return Err(shape_err(
                "complex_scale_rows",
                format!("shapes {:?} vs {:?}", sm, ss),
            ));
        }
        let (rows, cols) = (sm[sm.len() - 3], sm[sm.len() - 2]);
        if ss[..ss.len() - 1] != sm[..sm.len() - 2] {
            return Err(shape_err(
                "complex_scale_rows",
                format!("scale shape {:?} does not match matrix rows of {:?}", ss, sm),
            ));
        }
        let batch: usize = sm[..sm.len() - 3].iter().product();
        let out = cxops::scale_rows_fwd(
            self.values[m.0].data(),
            self.values[s.0].data(),
            batch,
            rows,
            cols,
        );
        let value = Tensor::from_vec(&sm, out);
        let rg = self.needs_grad(&[m, s]);
        Ok(self.push(Op::ComplexScaleRows { m, s, batch, rows, cols }, value, rg))
    }

    /// Elementwise complex reciprocal 1/z.
    pub fn complex_reciprocal(&mut self, x: VarId) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.last() != Some(&2) {
            return Err(shape_err(
                "complex_reciprocal",
                format!("expected trailing 2, got {:?}", s),
            ));
        }
        let out = cxops::reciprocal_fwd(self.values[x.0].data());
        let value = Tensor::from_vec(&s, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::ComplexReciprocal { x }, value, rg))
    }

    /// Diagonal of the trailing square matrix dims: [.., n, n, 2] -> [.., n, 2].
    pub fn diag_part(&mut self, x: VarId) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 || *s.last().unwrap() != 2 || s[s.len() - 3] != s[s.len() - 2] {
            return Err(shape_err(
                "diag_part",
                format!("expected [.., n, n, 2], got {:?}", s),
            ));
        }
        let n = s[s.len() - 2];
        let batch: usize = s[..s.len() - 3].iter().product();
        let out = cxops::diag_part_fwd(self.values[x.0].data(), batch, n);
        let mut out_shape = s[..s.len() - 3].to_vec();
        out_shape.extend_from_slice(&[n, 2]);
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::DiagPart { x, batch, n }, value, rg))
    }

    /// Inverse of small complex matrices (n <= 4): y = (x + ridge I)^-1.
    pub fn small_complex_inverse(&mut self, x: VarId, ridge: R) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.len() < 3 || *s.last().unwrap() != 2 || s[s.len() - 3] != s[s.len() - 2] {
            return Err(shape_err(
                "small_complex_inverse",
                format!("expected [.., n, n, 2], got {:?}", s),
            ));
        }
        let n = s[s.len() - 2];
        if n > 4 {
            return Err(shape_err(
                "small_complex_inverse",
                format!("matrix dim {} exceeds 4", n),
            ));
        }
        let batch: usize = s[..s.len() - 3].iter().product();
        let out = cxops::small_inverse_fwd(self.values[x.0].data(), batch, n, ridge)?;
        let value = Tensor::from_vec(&s, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::SmallComplexInverse { x, batch, n }, value, rg))
    }

    // ---- convolutions and normalization -----------------------------------

    /// Depthwise 2-D convolution, zero-padded to "same" size.
    /// x: [s, f, c], kernel: [kh, kw, c], bias: [c].
    pub fn conv2d_depthwise(
        &mut self,
        x: VarId,
        kernel: VarId,
        bias: VarId,
        dilation: (usize, usize),
    ) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 3 || sk.len() != 3 || sk[2] != sx[2] || sb != [sx[2]] {
            return Err(shape_err(
                "conv2d_depthwise",
                format!("x {:?}, kernel {:?}, bias {:?}", sx, sk, sb),
            ));
        }
        if sk[0] % 2 == 0 || sk[1] % 2 == 0 {
            return Err(shape_err(
                "conv2d_depthwise",
                format!("kernel dims must be odd for same padding, got {:?}", sk),
            ));
        }
        let dims = conv::ConvDims {
            s: sx[0],
            f: sx[1],
            c: sx[2],
            kh: sk[0],
            kw: sk[1],
            dh: dilation.0,
            dw: dilation.1,
        };
        let out = conv::depthwise_fwd(
            self.values[x.0].data(),
            self.values[kernel.0].data(),
            self.values[bias.0].data(),
            &dims,
        );
        let value = Tensor::from_vec(&sx, out);
        let rg = self.needs_grad(&[x, kernel, bias]);
        Ok(self.push(Op::Conv2dDepthwise { x, kernel, bias, dims }, value, rg))
    }

    /// Pointwise (1x1) convolution: x: [s, f, c_in], kernel: [c_in, c_out], bias: [c_out].
    pub fn conv2d_pointwise(&mut self, x: VarId, kernel: VarId, bias: VarId) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 3 || sk.len() != 2 || sk[0] != sx[2] || sb != [sk[1]] {
            return Err(shape_err(
                "conv2d_pointwise",
                format!("x {:?}, kernel {:?}, bias {:?}", sx, sk, sb),
            ));
        }
        let rows = sx[0] * sx[1];
        let (c_in, c_out) = (sk[0], sk[1]);
        let out = conv::pointwise_fwd(
            self.values[x.0].data(),
            self.values[kernel.0].data(),
            self.values[bias.0].data(),
            rows,
            c_in,
            c_out,
        );
        let value = Tensor::from_vec(&[sx[0], sx[1], c_out], out);
        let rg = self.needs_grad(&[x, kernel, bias]);
        Ok(self.push(Op::Conv2dPointwise { x, kernel, bias, rows, c_in, c_out }, value, rg))
    }

    /// Per-channel affine normalization over the spatial dims of [s, f, c].
    ///
    /// Returns the output node plus the (mean, var) actually used, so callers
    /// can maintain running statistics.
    pub fn channel_norm(
        &mut self,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        eps: R,
        stats: NormStats<R>,
    ) -> Result<(VarId, Vec<R>, Vec<R>)> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().ok_or_else(|| {
            shape_err("channel_norm", "input must have at least one dim".to_string())
        })?;
        if sx.len() != 3 || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "channel_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    sx,
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let rows = sx[0] * sx[1];
        let (mean, var, from_batch) = match stats {
            NormStats::FromBatch => {
                let (m, v) = conv::spatial_stats(self.values[x.0].data(), rows, c);
                (m, v, true)
            }
            NormStats::Fixed(m, v) => {
                if m.len() != c || v.len() != c {
                    return Err(shape_err(
                        "channel_norm",
                        format!("stats length {} vs channels {}", m.len(), c),
                    ));
                }
                (m, v, false)
            }
        };
        let inv_std: Vec<R> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let out = conv::norm_fwd(
            self.values[x.0].data(),
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            &mean,
            &inv_std,
            rows,
            c,
        );
        let value = Tensor::from_vec(&sx, out);
        let rg = self.needs_grad(&[x, gamma, beta]);
        let id = self.push(
            Op::ChannelNorm { x, gamma, beta, mean: mean.clone(), inv_std, from_batch },
            value,
            rg,
        );
        Ok((id, mean, var))
    }

    // ---- movement & reduction ---------------------------------------------

    pub fn concat(&mut self, inputs: &[VarId], axis: usize) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(shape_err("concat", "no inputs".to_string()));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(shape_err(
                "concat",
                format!("axis {} out of range for {:?}", axis, first),
            ));
        }
        let mut axis_total = 0usize;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(shape_err(
                    "concat",
                    format!("incompatible input shapes {:?} vs {:?} on axis {}", first, s, axis),
                ));
            }
            axis_total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let mut out = vec![R::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for &id in inputs {
            let s_axis = self.shape(id)[axis];
            let chunk = s_axis * inner;
            let data = self.values[id.0].data();
            for o in 0..outer {
                let dst = o * axis_total * inner + offset * inner;
                let src = o * chunk;
                out[dst..dst + chunk].copy_from_slice(&data[src..src + chunk]);
            }
            offset += s_axis;
        }
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(inputs);
        Ok(self.push(Op::Concat { inputs: inputs.to_vec(), axis }, value, rg))
    }

    pub fn reshape(&mut self, x: VarId, shape: &[usize]) -> Result<VarId> {
        let n: usize = shape.iter().product();
        if n != self.values[x.0].numel() {
            return Err(shape_err(
                "reshape",
                format!("cannot reshape {:?} to {:?}", self.shape(x), shape),
            ));
        }
        let value = self.values[x.0].clone().reshaped(shape);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::Reshape { x }, value, rg))
    }

    pub fn transpose(&mut self, x: VarId, perm: &[usize]) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if perm.len() != s.len() || {
            let mut sorted = perm.to_vec();
            sorted.sort_unstable();
            sorted != (0..s.len()).collect::<Vec<_>>()
        } {
            return Err(shape_err(
                "transpose",
                format!("invalid permutation {:?} for shape {:?}", perm, s),
            ));
        }
        let out = permute(self.values[x.0].data(), &s, perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::Transpose { x, perm: perm.to_vec() }, value, rg))
    }

    /// Sum of all elements -> scalar.
    pub fn reduce_sum(&mut self, x: VarId) -> VarId {
        let total = self.values[x.0].data().iter().copied().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Op::ReduceSum { x }, Tensor::scalar(total), rg)
    }

    /// Mean of all elements -> scalar.
    pub fn reduce_mean(&mut self, x: VarId) -> VarId {
        let n = R::from_usize(self.values[x.0].numel().max(1)).unwrap();
        let total: R = self.values[x.0].data().iter().copied().sum();
        let rg = self.needs_grad(&[x]);
        self.push(Op::ReduceMean { x }, Tensor::scalar(total / n), rg)
    }

    /// Sum over the trailing axis: [.., n] -> [..].
    pub fn reduce_sum_last(&mut self, x: VarId) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        let last = *s.last().ok_or_else(|| {
            shape_err("reduce_sum_last", "input must have at least one dim".to_string())
        })?;
        let out_shape = &s[..s.len() - 1];
        let xd = self.values[x.0].data();
        let data: Vec<R> = xd
            .chunks_exact(last)
            .map(|c| c.iter().copied().sum())
            .collect();
        let value = Tensor::from_vec(out_shape, data);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::ReduceSumLast { x, last }, value, rg))
    }

    /// Select rows along the leading axis: x: [b, rest..] -> [indices.len(), rest..].
    pub fn index_select_batch(&mut self, x: VarId, indices: Arc<Vec<usize>>) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() {
            return Err(shape_err("index_select_batch", "scalar input".to_string()));
        }
        let row: usize = s[1..].iter().product();
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(shape_err(
                "index_select_batch",
                format!("index {} out of range for leading dim {}", bad, s[0]),
            ));
        }
        let xd = self.values[x.0].data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices.iter() {
            out.extend_from_slice(&xd[i * row..(i + 1) * row]);
        }
        let mut out_shape = s.clone();
        out_shape[0] = indices.len();
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::IndexSelectBatch { x, indices, row }, value, rg))
    }

    /// Apply a fixed sparse linear map over the leading axis:
    /// x: [in_rows, rest..] -> [out_rows, rest..].
    pub fn gather_linear(&mut self, x: VarId, plan: Arc<GatherPlan>) -> Result<VarId> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || s[0] != plan.in_rows {
            return Err(shape_err(
                "gather_linear",
                format!("input shape {:?} does not match plan rows {}", s, plan.in_rows),
            ));
        }
        let row: usize = s[1..].iter().product();
        let mut out = vec![R::zero(); plan.out_rows * row];
        plan.apply_forward(self.values[x.0].data(), &mut out, row);
        let mut out_shape = s.clone();
        out_shape[0] = plan.out_rows;
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x]);
        Ok(self.push(Op::GatherLinear { x, plan }, value, rg))
    }

    /// Exact max-log-free soft demapping.
    ///
    /// x: [.., 2] equalized symbols, sigma2: [..] per-symbol noise variances;
    /// output: [.., n_bits] LLRs with positive values favoring bit 0.
    pub fn qam_llr(
        &mut self,
        x: VarId,
        sigma2: VarId,
        tables: Arc<SoftDemapTables>,
    ) -> Result<VarId> {
        let sx = self.shape(x).to_vec();
        let ss = self.shape(sigma2).to_vec();
        if sx.last() != Some(&2) || ss[..] != sx[..sx.len() - 1] {
            return Err(shape_err(
                "qam_llr",
                format!("symbols {:?} vs variances {:?}", sx, ss),
            ));
        }
        let count = self.values[sigma2.0].numel();
        let out = demap::llr_fwd(
            self.values[x.0].data(),
            self.values[sigma2.0].data(),
            &tables,
            count,
        );
        let mut out_shape = sx[..sx.len() - 1].to_vec();
        out_shape.push(tables.n_bits);
        let value = Tensor::from_vec(&out_shape, out);
        let rg = self.needs_grad(&[x, sigma2]);
        Ok(self.push(Op::QamLlr { x, sigma2, tables }, value, rg))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar loss; every node is visited exactly once.
    pub fn backward(&self, loss: VarId) -> Result<Gradients<R>> {
        let loss_val = &self.values[loss.0];
        if loss_val.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_val.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_vec(loss_val.shape(), vec![R::one()]));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.all_finite() {
                return Err(Error::NanGradient {
                    node: idx,
                    op: self.nodes[idx].op.name(),
                });
            }
            self.backward_op(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], id: VarId, update: impl FnOnce(&mut [R])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.values[id.0].shape()));
        }
        update(slot.as_mut().unwrap().data_mut());
    }

    fn backward_op(
        &self,
        idx: usize,
        g: &Tensor<R>,
        grads: &mut Vec<Option<Tensor<R>>>,
    ) -> Result<()> {
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |ga| {
                    for (o, &gi) in ga.iter_mut().zip(gd) {
                        *o += gi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, &gi) in gb.iter_mut().zip(gd) {
                        *o += gi;
                    }
                });
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, |ga| {
                    for (o, &gi) in ga.iter_mut().zip(gd) {
                        *o += gi;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (o, &gi) in gb.iter_mut().zip(gd) {
                        *o -= gi;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.values[a.0].data(), self.values[b.0].data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i] * av[i];
                    }
                });
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * s;
                    }
                });
            }
            Op::ScalarMul { s, x } => {
                let sv = self.values[s.0].data()[0];
                let xv = self.values[x.0].data();
                self.accumulate(grads, *s, |gs| {
                    let mut acc = R::zero();
                    for i in 0..xv.len() {
                        acc += gd[i] * xv[i];
                    }
                    gs[0] += acc;
                });
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * sv;
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.values[x.0].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > R::zero() {
                            gx[i] += gd[i];
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let yv = self.values[idx].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * yv[i] * (R::one() - yv[i]);
                    }
                });
            }
            Op::Softplus { x } => {
                let xv = self.values[x.0].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * sigmoid_scalar(xv[i]);
                    }
                });
            }
            Op::Log { x } => {
                let xv = self.values[x.0].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] / xv[i];
                    }
                });
            }
            Op::Exp { x } => {
                let yv = self.values[idx].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * yv[i];
                    }
                });
            }
            Op::Sqrt { x } => {
                let yv = self.values[idx].data();
                let half = R::from_f64_lossy(0.5);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += gd[i] * half / yv[i];
                    }
                });
            }
            Op::Reciprocal { x } => {
                let yv = self.values[idx].data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] -= gd[i] * yv[i] * yv[i];
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.values[x.0].data();
                let (lo, hi) = (*lo, *hi);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > lo && xv[i] < hi {
                            gx[i] += gd[i];
                        }
                    }
                });
            }
            Op::AbsSquared { x } => {
                let xv = self.values[x.0].data();
                let two = R::from_f64_lossy(2.0);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gd.len() {
                        gx[2 * i] += two * xv[2 * i] * gd[i];
                        gx[2 * i + 1] += two * xv[2 * i + 1] * gd[i];
                    }
                });
            }
            Op::Matmul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                // dA = g . B^T, dB = A^T . g
                self.accumulate(grads, *a, |ga| {
                    R::gemm_acc(m, n, k, gd, (n as isize, 1), bv, (1, n as isize), ga);
                });
                self.accumulate(grads, *b, |gb| {
                    R::gemm_acc(k, m, n, av, (1, k as isize), gd, (n as isize, 1), gb);
                });
            }
            Op::ComplexMatmul { a, b, batch, a_batched, b_batched, m, k, n } => {
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (ab, bb) = (*a_batched, *b_batched);
                self.accumulate(grads, *a, |ga| {
                    cxops::matmul_bwd_a(gd, bv, ga, batch, ab, bb, m, k, n);
                });
                self.accumulate(grads, *b, |gb| {
                    cxops::matmul_bwd_b(gd, av, gb, batch, ab, bb, m, k, n);
                });
            }
            Op::Hermitian { x, batch, m, n } => {
                let (batch, m, n) = (*batch, *m, *n);
                self.accumulate(grads, *x, |gx| {
                    cxops::hermitian_bwd(gd, gx, batch, m, n);
                });
            }
            Op::Conj { x } => {
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() / 2 {
                        gx[2 * i] += gd[2 * i];
                        gx[2 * i + 1] -= gd[2 * i + 1];
                    }
                });
            }
            Op::ComplexMulElem { a, b } => {
                let av = self.values[a.0].data();
                let bv = self.values[b.0].data();
                self.accumulate(grads, *a, |ga| cxops::mul_elem_bwd(gd, bv, ga));
                self.accumulate(grads, *b, |gb| cxops::mul_elem_bwd(gd, av, gb));
            }
            Op::ComplexScaleRows { m, s, batch, rows, cols } => {
                let mv = self.values[m.0].data();
                let sv = self.values[s.0].data();
                let (batch, rows, cols) = (*batch, *rows, *cols);
                self.accumulate(grads, *m, |gm| {
                    cxops::scale_rows_bwd_mat(gd, sv, gm, batch, rows, cols);
                });
                self.accumulate(grads, *s, |gs| {
                    cxops::scale_rows_bwd_scale(gd, mv, gs, batch, rows, cols);
                });
            }
            Op::ComplexReciprocal { x } => {
                let yv = self.values[idx].data();
                self.accumulate(grads, *x, |gx| cxops::reciprocal_bwd(gd, yv, gx));
            }
            Op::DiagPart { x, batch, n } => {
                let (batch, n) = (*batch, *n);
                self.accumulate(grads, *x, |gx| cxops::diag_part_bwd(gd, gx, batch, n));
            }
            Op::SmallComplexInverse { x, batch, n } => {
                let yv = self.values[idx].data();
                let (batch, n) = (*batch, *n);
                self.accumulate(grads, *x, |gx| {
                    cxops::small_inverse_bwd(gd, yv, gx, batch, n);
                });
            }
            Op::Conv2dDepthwise { x, kernel, bias, dims } => {
                let xv = self.values[x.0].data();
                let kv = self.values[kernel.0].data();
                self.accumulate(grads, *x, |gx| conv::depthwise_bwd_input(gd, kv, gx, dims));
                self.accumulate(grads, *kernel, |gk| conv::depthwise_bwd_kernel(gd, xv, gk, dims));
                self.accumulate(grads, *bias, |gb| conv::bias_bwd(gd, gb, dims.c));
            }
            Op::Conv2dPointwise { x, kernel, bias, rows, c_in, c_out } => {
                let xv = self.values[x.0].data();
                let kv = self.values[kernel.0].data();
                let (rows, c_in, c_out) = (*rows, *c_in, *c_out);
                self.accumulate(grads, *x, |gx| {
                    R::gemm_acc(rows, c_out, c_in, gd, (c_out as isize, 1), kv, (1, c_out as isize), gx);
                });
                self.accumulate(grads, *kernel, |gk| {
                    R::gemm_acc(c_in, rows, c_out, xv, (1, c_in as isize), gd, (c_out as isize, 1), gk);
                });
                self.accumulate(grads, *bias, |gb| conv::bias_bwd(gd, gb, c_out));
            }
            Op::ChannelNorm { x, gamma, beta, mean, inv_std, from_batch } => {
                let xv = self.values[x.0].data();
                let gv = self.values[gamma.0].data();
                let c = mean.len();
                let rows = xv.len() / c;
                self.accumulate(grads, *x, |gx| {
                    conv::norm_bwd_input(gd, xv, gv, mean, inv_std, *from_batch, rows, c, gx);
                });
                self.accumulate(grads, *gamma, |gg| {
                    conv::norm_bwd_gamma(gd, xv, mean, inv_std, rows, c, gg);
                });
                self.accumulate(grads, *beta, |gb| conv::bias_bwd(gd, gb, c));
            }
            Op::Concat { inputs, axis } => {
                let out_shape = self.values[idx].shape().to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let axis_total = out_shape[*axis];
                let mut offset = 0usize;
                for &inp in inputs {
                    let s_axis = self.shape(inp)[*axis];
                    let chunk = s_axis * inner;
                    let off = offset;
                    self.accumulate(grads, inp, |gi| {
                        for o in 0..outer {
                            let src = o * axis_total * inner + off * inner;
                            let dst = o * chunk;
                            for t in 0..chunk {
                                gi[dst + t] += gd[src + t];
                            }
                        }
                    });
                    offset += s_axis;
                }
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |gx| {
                    for (o, &gi) in gx.iter_mut().zip(gd) {
                        *o += gi;
                    }
                });
            }
            Op::Transpose { x, perm } => {
                let in_shape = self.shape(*x).to_vec();
                let out_shape = self.values[idx].shape().to_vec();
                // inverse permutation applied to the gradient
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = permute(gd, &out_shape, &inv);
                debug_assert_eq!(back.len(), in_shape.iter().product::<usize>());
                self.accumulate(grads, *x, |gx| {
                    for (o, &gi) in gx.iter_mut().zip(&back) {
                        *o += gi;
                    }
                });
            }
            Op::ReduceSum { x } => {
                let gi = gd[0];
                self.accumulate(grads, *x, |gx| {
                    for o in gx.iter_mut() {
                        *o += gi;
                    }
                });
            }
            Op::ReduceMean { x } => {
                let n = R::from_usize(self.values[x.0].numel().max(1)).unwrap();
                let gi = gd[0] / n;
                self.accumulate(grads, *x, |gx| {
                    for o in gx.iter_mut() {
                        *o += gi;
                    }
                });
            }
            Op::ReduceSumLast { x, last } => {
                let last = *last;
                self.accumulate(grads, *x, |gx| {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o += gd[i / last];
                    }
                });
            }
            Op::IndexSelectBatch { x, indices, row } => {
                let row = *row;
                self.accumulate(grads, *x, |gx| {
                    for (i, &src) in indices.iter().enumerate() {
                        for t in 0..row {
                            gx[src * row + t] += gd[i * row + t];
                        }
                    }
                });
            }
            Op::GatherLinear { x, plan } => {
                let row: usize = self.shape(*x)[1..].iter().product();
                self.accumulate(grads, *x, |gx| plan.apply_backward(gd, gx, row));
            }
            Op::QamLlr { x, sigma2, tables } => {
                let xv = self.values[x.0].data();
                let sv = self.values[sigma2.0].data();
                let count = sv.len();
                self.accumulate(grads, *x, |gx| {
                    demap::llr_bwd_symbols(gd, xv, sv, tables, count, gx);
                });
                self.accumulate(grads, *sigma2, |gs| {
                    demap::llr_bwd_sigma2(gd, xv, sv, tables, count, gs);
                });
            }
        }
        Ok(())
    }
}

fn sigmoid_scalar<R: Real>(x: R) -> R {
    if x >= R::zero() {
        (R::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn softplus_scalar<R: Real>(x: R) -> R {
    // ln(1 + e^x) without overflow
    if x > R::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Materialize a permuted copy of `data` with the given shape/permutation.
pub(crate) fn permute<R: Real>(data: &[R], shape: &[usize], perm: &[usize]) -> Vec<R> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides = strides_of(&out_shape);
    let n = data.len();
    let mut out = vec![R::zero(); n];
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    for (flat, &v) in data.iter().enumerate() {
        let mut rem = flat;
        for d in 0..rank {
            idx[d] = rem / in_strides[d];
            rem %= in_strides[d];
        }
        let mut dst = 0usize;
        for d in 0..rank {
            dst += idx[perm[d]] * out_strides[d];
        }
        out[dst] = v;
    }
    out
}
