//! Layers with exact forward and backward passes over NCHW / NF tensors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Sigmoid outputs are clamped to `[SIGMOID_EPS, 1 - SIGMOID_EPS]` so the
/// cross entropy never evaluates `log(0)`.
pub const SIGMOID_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// `floor((in + 2·pad − k)/stride) + 1`, rejecting empty outputs.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::invalid(format!("conv {self:?}: zero kernel or stride")));
        }
        let out = |n: usize, k: usize| -> Result<usize> {
            let padded = n + 2 * self.pad;
            if padded < k {
                return Err(Error::shape(format!(
                    "conv kernel {k} does not fit padded extent {padded}"
                )));
            }
            Ok((padded - k) / self.stride + 1)
        };
        Ok((out(h, self.kernel_h)?, out(w, self.kernel_w)?))
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.patch_len() + self.out_channels
    }
}

/// Declarative description of a single layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    MaxPool { size: usize },
    Relu,
    Sigmoid,
    Flatten,
    FullyConnected { fan_in: usize, fan_out: usize },
}

impl LayerSpec {
    /// Shape of one batch item after this layer (`[C,H,W]` or `[F]`).
    pub fn output_item_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv(c) => {
                let [ch, h, w] = as3(input)?;
                if ch != c.in_channels {
                    return Err(Error::shape(format!(
                        "conv expects {} input channels, got {ch}",
                        c.in_channels
                    )));
                }
                let (ho, wo) = c.output_hw(h, w)?;
                Ok(vec![c.out_channels, ho, wo])
            }
            LayerSpec::MaxPool { size } => {
                let [ch, h, w] = as3(input)?;
                if size == 0 || h % size != 0 || w % size != 0 {
                    return Err(Error::shape(format!(
                        "max pool {size}×{size} needs extents divisible by {size}, got {h}×{w}"
                    )));
                }
                Ok(vec![ch, h / size, w / size])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::FullyConnected { fan_in, fan_out } => {
                let f: usize = input.iter().product();
                if input.len() != 1 || f != fan_in {
                    return Err(Error::shape(format!(
                        "fully connected fan-in {fan_in}, got input {input:?}"
                    )));
                }
                Ok(vec![fan_out])
            }
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv(c) => c.param_count(),
            LayerSpec::FullyConnected { fan_in, fan_out } => fan_in * fan_out + fan_out,
            _ => 0,
        }
    }
}

fn as3(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape(format!("expected a [C,H,W] item, got {shape:?}"))),
    }
}

fn as4(t: &Tensor<impl Scalar>) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::shape(format!("expected [B,C,H,W], got {:?}", t.shape()))),
    }
}

fn as2(t: &Tensor<impl Scalar>) -> Result<[usize; 2]> {
    match *t.shape() {
        [b, f] => Ok([b, f]),
        _ => Err(Error::shape(format!("expected [B,F], got {:?}", t.shape()))),
    }
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Debug)]
pub struct Conv2d<T: Scalar> {
    pub spec: ConvSpec,
    /// `[C_out, C_in, k_h, k_w]`
    pub weight: Tensor<T>,
    /// `[C_out]`
    pub bias: Tensor<T>,
}

/// Output columns `[lo, hi)` whose input column `ox·stride + k − pad` lies
/// inside `0..n`.
fn valid_range(k: usize, pad: usize, stride: usize, n: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if n + pad > k { ((n + pad - k - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one `[C,H,W]` item into a `[C·kh·kw, Ho·Wo]` patch matrix.
fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize, col: &mut [T]) {
    let plane = ho * wo;
    for ci in 0..s.in_channels {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.kernel_h {
            let (ylo, yhi) = valid_range(ky, s.pad, s.stride, h, ho);
            for kx in 0..s.kernel_w {
                let (xlo, xhi) = valid_range(kx, s.pad, s.stride, w, wo);
                let row = (ci * s.kernel_h + ky) * s.kernel_w + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                dst[..ylo * wo].fill(T::ZERO);
                dst[yhi * wo..].fill(T::ZERO);
                for oy in ylo..yhi {
                    let iy = oy * s.stride + ky - s.pad;
                    let src = &xc[iy * w..(iy + 1) * w];
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    out_row[..xlo].fill(T::ZERO);
                    out_row[xhi..].fill(T::ZERO);
                    let ix0 = xlo * s.stride + kx - s.pad;
                    if s.stride == 1 {
                        out_row[xlo..xhi].copy_from_slice(&src[ix0..ix0 + (xhi - xlo)]);
                    } else {
                        for (o, v) in out_row[xlo..xhi].iter_mut().zip(src[ix0..].iter().step_by(s.stride)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `[C,H,W]` item.
fn col2im<T: Scalar>(col: &[T], h: usize, w: usize, s: &ConvSpec, ho: usize, wo: usize, x: &mut [T]) {
    x.fill(T::ZERO);
    let plane = ho * wo;
    for ci in 0..s.in_channels {
        let xc = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.kernel_h {
            let (ylo, yhi) = valid_range(ky, s.pad, s.stride, h, ho);
            for kx in 0..s.kernel_w {
                let (xlo, xhi) = valid_range(kx, s.pad, s.stride, w, wo);
                let row = (ci * s.kernel_h + ky) * s.kernel_w + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = oy * s.stride + ky - s.pad;
                    let dst = &mut xc[iy * w..(iy + 1) * w];
                    let ix0 = xlo * s.stride + kx - s.pad;
                    let srow = &src[oy * wo + xlo..oy * wo + xhi];
                    if s.stride == 1 {
                        for (d, v) in dst[ix0..ix0 + srow.len()].iter_mut().zip(srow) {
                            *d += *v;
                        }
                    } else {
                        for (d, v) in dst[ix0..].iter_mut().step_by(s.stride).zip(srow) {
                            *d += *v;
                        }
                    }
                }
            }
        }
    }
}

pub struct ConvGrads<T: Scalar> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: ConvSpec, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let wshape = [spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w];
        if weight.shape() != wshape || bias.shape() != [spec.out_channels] {
            return Err(Error::shape(format!(
                "conv {spec:?}: weight {:?} / bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        Conv2d {
            spec,
            weight: Tensor::zeros(&[spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w]),
            bias: Tensor::zeros(&[spec.out_channels]),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 6]> {
        let [b, c, h, w] = as4(x)?;
        if c != self.spec.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} channels, got {c}",
                self.spec.in_channels
            )));
        }
        let (ho, wo) = self.spec.output_hw(h, w)?;
        Ok([b, c, h, w, ho, wo])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, _, h, w, ho, wo] = self.check_input(x)?;
        let s = self.spec;
        let plane = ho * wo;
        let ck = s.patch_len();
        let mut out = Tensor::zeros(&[b, s.out_channels, ho, wo]);
        let item = x.item_len();
        out.data_mut()
            .par_chunks_mut(s.out_channels * plane)
            .enumerate()
            .for_each(|(n, y)| {
                let mut col = vec![T::ZERO; ck * plane];
                im2col(&x.data()[n * item..(n + 1) * item], h, w, &s, ho, wo, &mut col);
                for (co, yc) in y.chunks_mut(plane).enumerate() {
                    yc.fill(self.bias.data()[co]);
                }
                T::gemm(false, false, s.out_channels, plane, ck, T::ONE, self.weight.data(), &col, T::ONE, y);
            });
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, need_input: bool) -> Result<ConvGrads<T>> {
        let [b, c, h, w, ho, wo] = self.check_input(x)?;
        let s = self.spec;
        if dy.shape() != [b, s.out_channels, ho, wo] {
            return Err(Error::shape(format!(
                "conv backward: gradient {:?} vs output [{b},{},{ho},{wo}]",
                dy.shape(),
                s.out_channels
            )));
        }
        let plane = ho * wo;
        let ck = s.patch_len();
        let item = x.item_len();
        let per_item: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = (0..b)
            .into_par_iter()
            .map(|n| {
                let xn = &x.data()[n * item..(n + 1) * item];
                let dyn_ = dy.item(n);
                let mut col = vec![T::ZERO; ck * plane];
                im2col(xn, h, w, &s, ho, wo, &mut col);
                let mut dw = vec![T::ZERO; s.out_channels * ck];
                T::gemm(false, true, s.out_channels, ck, plane, T::ONE, dyn_, &col, T::ZERO, &mut dw);
                let db: Vec<T> = dyn_.chunks(plane).map(|r| r.iter().copied().sum()).collect();
                let dx = need_input.then(|| {
                    T::gemm(true, false, ck, plane, s.out_channels, T::ONE, self.weight.data(), dyn_, T::ZERO, &mut col);
                    let mut dx = vec![T::ZERO; item];
                    col2im(&col, h, w, &s, ho, wo, &mut dx);
                    dx
                });
                (dw, db, dx)
            })
            .collect();

        let mut dw = Tensor::zeros(self.weight.shape());
        let mut db = Tensor::zeros(self.bias.shape());
        let mut dx = need_input.then(|| Vec::with_capacity(x.len()));
        for (w_n, b_n, x_n) in per_item {
            dw.data_mut().iter_mut().zip(&w_n).for_each(|(a, v)| *a += *v);
            db.data_mut().iter_mut().zip(&b_n).for_each(|(a, v)| *a += *v);
            if let (Some(acc), Some(x_n)) = (dx.as_mut(), x_n) {
                acc.extend_from_slice(&x_n);
            }
        }
        let input = match dx {
            Some(d) => Some(Tensor::from_vec(&[b, c, h, w], d)?),
            None => None,
        };
        Ok(ConvGrads {
            input,
            weight: dw,
            bias: db,
        })
    }
}

// ---------------------------------------------------------------------------
// Max pooling

/// Square max pooling with stride equal to the window size, no padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub size: usize,
}

impl MaxPool2d {
    /// Returns the pooled tensor and, per output element, the flat input index
    /// of the selected maximum. Ties go to the first element in row-major
    /// window order.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let [b, c, h, w] = as4(x)?;
        let k = self.size;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::shape(format!(
                "max pool {k}×{k} needs extents divisible by {k}, got {h}×{w}"
            )));
        }
        let (ho, wo) = (h / k, w / k);
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut arg = Vec::with_capacity(b * c * ho * wo);
        let xd = x.data();
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if xd[i] > xd[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xd[best]);
                    arg.push(best);
                }
            }
        }
        Ok((Tensor::from_vec(&[b, c, ho, wo], out)?, arg))
    }

    pub fn backward<T: Scalar>(&self, input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
        if argmax.len() != dy.len() {
            return Err(Error::shape("max pool backward: gradient/argmax length"));
        }
        let mut dx = Tensor::zeros(input_shape);
        let d = dx.data_mut();
        for (&i, &g) in argmax.iter().zip(dy.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

// ---------------------------------------------------------------------------
// Elementwise

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// `dy` masked by the positive part of the forward output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&y, &g)| if y > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("relu backward shape")
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let lo = T::of(SIGMOID_EPS);
    let hi = T::of(1.0 - SIGMOID_EPS);
    let s = if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    };
    s.max(lo).min(hi)
}

/// Logistic function with outputs clamped to `[ε, 1−ε]`.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Uses the derivative of the unclamped logistic, `e^{-|x|}/(1+e^{-|x|})²`,
/// so saturated units still pass gradient.
pub fn sigmoid_backward<T: Scalar>(pre: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = pre
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&x, &g)| {
            let e = (-x.abs()).exp();
            let d = T::ONE + e;
            g * e / (d * d)
        })
        .collect();
    Tensor::from_vec(dy.shape(), data).expect("sigmoid backward shape")
}

// ---------------------------------------------------------------------------
// Fully connected

#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    /// `[fan_out, fan_in]`
    pub weight: Tensor<T>,
    /// `[fan_out]`
    pub bias: Tensor<T>,
}

pub struct DenseGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            (&[o, _], &[ob]) if o == ob => Ok(Dense { weight, bias }),
            (ws, bs) => Err(Error::shape(format!("dense weight {ws:?} / bias {bs:?}"))),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[fan_out, fan_in]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `y = x·Wᵀ + b`; every dot product accumulates sequentially from the
    /// bias over input index 0..F, so appending zero-weight inputs leaves the
    /// result bit-identical.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, f] = as2(x)?;
        if f != self.fan_in() {
            return Err(Error::shape(format!(
                "dense fan-in {} but input has {f} features",
                self.fan_in()
            )));
        }
        let fo = self.fan_out();
        let mut out = Tensor::zeros(&[b, fo]);
        out.data_mut().par_chunks_mut(fo.max(1)).enumerate().for_each(|(n, y)| {
            let xn = &x.data()[n * f..(n + 1) * f];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &self.weight.data()[o * f..(o + 1) * f];
                let mut acc = self.bias.data()[o];
                for (wi, xi) in row.iter().zip(xn) {
                    acc += *wi * *xi;
                }
                *yo = acc;
            }
        });
        Ok(out)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<DenseGrads<T>> {
        let [b, f] = as2(x)?;
        let fo = self.fan_out();
        if dy.shape() != [b, fo] {
            return Err(Error::shape(format!(
                "dense backward: gradient {:?} vs [{b},{fo}]",
                dy.shape()
            )));
        }
        let mut dw = Tensor::zeros(&[fo, f]);
        T::gemm(true, false, fo, f, b, T::ONE, dy.data(), x.data(), T::ZERO, dw.data_mut());
        let mut db = Tensor::zeros(&[fo]);
        for n in 0..b {
            for (a, g) in db.data_mut().iter_mut().zip(dy.item(n)) {
                *a += *g;
            }
        }
        let mut dx = Tensor::zeros(&[b, f]);
        T::gemm(false, false, b, f, fo, T::ONE, dy.data(), self.weight.data(), T::ZERO, dx.data_mut());
        Ok(DenseGrads {
            input: dx,
            weight: dw,
            bias: db,
        })
    }
}

// ---------------------------------------------------------------------------
// Concatenation

/// Feature-axis concatenation of `[B,Fa]` and `[B,Fb]`.
pub fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [ba, fa] = as2(a)?;
    let [bb, fb] = as2(b)?;
    if ba != bb {
        return Err(Error::shape(format!("concat batch extents differ: {ba} vs {bb}")));
    }
    let mut data = Vec::with_capacity(ba * (fa + fb));
    for n in 0..ba {
        data.extend_from_slice(&a.data()[n * fa..(n + 1) * fa]);
        data.extend_from_slice(&b.data()[n * fb..(n + 1) * fb]);
    }
    Tensor::from_vec(&[ba, fa + fb], data)
}

/// Splits a `[B,Fa+Fb]` gradient at the seam `Fa`.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, fa: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [b, f] = as2(dy)?;
    if fa > f {
        return Err(Error::shape(format!("concat seam {fa} beyond width {f}")));
    }
    let fb = f - fa;
    let mut ga = Vec::with_capacity(b * fa);
    let mut gb = Vec::with_capacity(b * fb);
    for row in dy.data().chunks(f.max(1)).take(b) {
        ga.extend_from_slice(&row[..fa]);
        gb.extend_from_slice(&row[fa..]);
    }
    if f == 0 {
        // rows are empty; nothing to split
        return Ok((Tensor::zeros(&[b, 0]), Tensor::zeros(&[b, 0])));
    }
    Ok((Tensor::from_vec(&[b, fa], ga)?, Tensor::from_vec(&[b, fb], gb)?))
}
