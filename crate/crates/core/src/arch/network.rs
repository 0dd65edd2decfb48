//! L-Seg, G-Seg, RA-Seg and LG-Seg networks.

use std::borrow::Cow;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::profile::{Profile, StemSpec};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_checkpoint, write_checkpoint};
use crate::nn::gradcheck::{combine_signatures, GradCheckTarget, Probe};
use crate::nn::init::xavier_init;
use crate::nn::layers::{concat, concat_backward, LayerSpec};
use crate::nn::loss::{cross_entropy_loss, cross_entropy_terms};
use crate::nn::optim::ParamMut;
use crate::nn::sequential::{Layer, Sequential, Tape, Trace};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// LG-Seg: both stems, concatenated, three fully connected layers.
    Dual,
    /// L-Seg.
    LocalOnly,
    /// G-Seg.
    GlobalOnly,
    /// RA-Seg: global stem, one residential probability per patch.
    RaClassifier,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dual => "dual",
            Mode::LocalOnly => "local",
            Mode::GlobalOnly => "global",
            Mode::RaClassifier => "ra",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dual" | "lg" | "lgseg" => Ok(Mode::Dual),
            "local" | "l" | "lseg" => Ok(Mode::LocalOnly),
            "global" | "g" | "gseg" => Ok(Mode::GlobalOnly),
            "ra" | "raseg" => Ok(Mode::RaClassifier),
            _ => Err(Error::invalid(format!("unknown network mode {s:?}"))),
        }
    }

    pub fn uses_local(self) -> bool {
        matches!(self, Mode::Dual | Mode::LocalOnly)
    }

    pub fn uses_global(self) -> bool {
        !matches!(self, Mode::LocalOnly)
    }
}

/// Fixed per-channel affine map `(x - mean) * scale` applied to both stem
/// inputs before the first convolution. Not learned; the identity by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: [f32; 3],
    pub scale: [f32; 3],
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm {
            mean: [0.0; 3],
            scale: [1.0; 3],
        }
    }
}

impl InputNorm {
    /// Channel means and inverse standard deviations of `[0,1]` pixels.
    /// Flat channels keep scale 1.
    pub fn from_pixels<'a>(images: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0u64;
        for data in images {
            for px in data.chunks_exact(3) {
                for k in 0..3 {
                    let v = px[k] as f64 / 255.0;
                    sum[k] += v;
                    sq[k] += v * v;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mut out = Self::default();
        for k in 0..3 {
            let m = sum[k] / n as f64;
            let var = (sq[k] / n as f64 - m * m).max(0.0);
            out.mean[k] = m as f32;
            out.scale[k] = if var > 1e-12 { (1.0 / var.sqrt()) as f32 } else { 1.0 };
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let plane = x.shape()[2] * x.shape()[3];
        for (i, chunk) in y.data_mut().chunks_exact_mut(plane).enumerate() {
            let k = i % 3;
            let (m, s) = (T::of(self.mean[k] as f64), T::of(self.scale[k] as f64));
            for v in chunk {
                *v = (*v - m) * s;
            }
        }
        y
    }

    fn to_tensor(self) -> Tensor<f32> {
        let mut d = self.mean.to_vec();
        d.extend_from_slice(&self.scale);
        Tensor::from_vec(&[2, 3], d).expect("2×3")
    }
}

/// Checkpoint name of the optional input normalization tensor.
const NORM_TENSOR: &str = "input.norm";

#[derive(Clone, Debug)]
pub struct Network<T: Scalar = f32> {
    pub mode: Mode,
    pub profile: Profile,
    pub input_norm: InputNorm,
    pub local: Option<Sequential<T>>,
    pub global: Option<Sequential<T>>,
    pub head: Sequential<T>,
}

/// Recorded forward pass of a whole network.
pub struct NetTape<T: Scalar> {
    local: Option<Tape<T>>,
    global: Option<Tape<T>>,
    head: Tape<T>,
    local_width: usize,
}

fn stem<T: Scalar>(name: &str, spec: &StemSpec, input: usize) -> Result<Sequential<T>> {
    let mut seq = Sequential::new(name);
    let (mut convs, mut pools) = (0, 0);
    for ls in spec.layer_specs(3) {
        match ls {
            LayerSpec::Conv(_) => {
                convs += 1;
                seq.push(format!("conv{convs}"), Layer::from_spec(ls));
                seq.push(format!("relu{convs}"), Layer::Relu);
            }
            _ => {
                pools += 1;
                seq.push(format!("pool{pools}"), Layer::from_spec(ls));
            }
        }
    }
    let [c, h, w] = spec.conv_output(input)?;
    seq.push("flatten", Layer::Flatten);
    seq.push(
        "fc",
        Layer::from_spec(LayerSpec::FullyConnected {
            fan_in: c * h * w,
            fan_out: spec.features,
        }),
    );
    seq.push("relu_fc", Layer::Relu);
    Ok(seq)
}

fn dense<T: Scalar>(fan_in: usize, fan_out: usize) -> Layer<T> {
    Layer::from_spec(LayerSpec::FullyConnected { fan_in, fan_out })
}

impl<T: Scalar> Network<T> {
    /// Builds the layer graph with all parameters zero.
    pub fn zeros(profile: &Profile, mode: Mode) -> Result<Self> {
        profile.validate()?;
        let out = profile.output * profile.output;
        let local = mode
            .uses_local()
            .then(|| stem("local", &profile.local, profile.local_input))
            .transpose()?;
        let global = mode
            .uses_global()
            .then(|| stem("global", &profile.global, profile.global_input))
            .transpose()?;
        let mut head = Sequential::new("head");
        match mode {
            Mode::Dual => {
                let [h1, h2] = profile.fusion_hidden;
                head.push("fc1", dense(profile.local.features + profile.global.features, h1));
                head.push("relu1", Layer::Relu);
                head.push("fc2", dense(h1, h2));
                head.push("relu2", Layer::Relu);
                head.push("fc3", dense(h2, out));
            }
            Mode::LocalOnly => head.push("fc", dense(profile.local.features, out)),
            Mode::GlobalOnly => head.push("fc", dense(profile.global.features, out)),
            Mode::RaClassifier => head.push("fc", dense(profile.global.features, 1)),
        }
        head.push("sigmoid", Layer::Sigmoid);
        Ok(Network {
            mode,
            profile: profile.clone(),
            input_norm: InputNorm::default(),
            local,
            global,
            head,
        })
    }

    /// Xavier-uniform weights and zero biases from a seeded ChaCha stream.
    pub fn new(profile: &Profile, mode: Mode, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(profile, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params_mut() {
            if !p.is_bias {
                *p.value = xavier_init(p.value.shape(), &mut rng);
            }
        }
        Ok(net)
    }

    pub fn output_width(&self) -> usize {
        match self.mode {
            Mode::RaClassifier => 1,
            _ => self.profile.output * self.profile.output,
        }
    }

    fn sequences(&self) -> impl Iterator<Item = &Sequential<T>> {
        self.local.iter().chain(self.global.iter()).chain(std::iter::once(&self.head))
    }

    pub fn param_count(&self) -> usize {
        self.sequences().map(|s| s.param_count()).sum()
    }

    /// Learnable tensors in checkpoint order: local stem, global stem, head.
    pub fn params(&self) -> Vec<(String, &Tensor<T>, bool)> {
        self.sequences().flat_map(|s| s.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        if let Some(l) = self.local.as_mut() {
            out.extend(l.params_mut());
        }
        if let Some(g) = self.global.as_mut() {
            out.extend(g.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|(_, t, _)| t.shape().to_vec()).collect()
    }

    fn check_input(&self, x: &Tensor<T>, width: usize, which: &str) -> Result<()> {
        match *x.shape() {
            [_, 3, h, w] if h == width && w == width => Ok(()),
            _ => Err(Error::shape(format!(
                "{which} input must be [B,3,{width},{width}], got {:?}",
                x.shape()
            ))),
        }
    }

    fn inputs<'a>(&self, local: Option<&'a Tensor<T>>, global: Option<&'a Tensor<T>>) -> Result<(Option<Cow<'a, Tensor<T>>>, Option<Cow<'a, Tensor<T>>>)> {
        let l = if self.mode.uses_local() {
            let l = local.ok_or_else(|| Error::invalid("network needs a local input"))?;
            self.check_input(l, self.profile.local_input, "local")?;
            Some(l)
        } else {
            None
        };
        let g = if self.mode.uses_global() {
            let g = global.ok_or_else(|| Error::invalid("network needs a global input"))?;
            self.check_input(g, self.profile.global_input, "global")?;
            Some(g)
        } else {
            None
        };
        if let (Some(l), Some(g)) = (l, g) {
            if l.batch() != g.batch() {
                return Err(Error::shape(format!(
                    "local batch {} vs global batch {}",
                    l.batch(),
                    g.batch()
                )));
            }
        }
        let norm = |x: &'a Tensor<T>| {
            if self.input_norm.is_identity() {
                Cow::Borrowed(x)
            } else {
                Cow::Owned(self.input_norm.apply(x))
            }
        };
        Ok((l.map(norm), g.map(norm)))
    }

    fn join(&self, lf: Option<Tensor<T>>, gf: Option<Tensor<T>>) -> Result<Tensor<T>> {
        match (lf, gf) {
            (Some(l), Some(g)) => concat(&l, &g),
            (Some(f), None) | (None, Some(f)) => Ok(f),
            (None, None) => Err(Error::invalid("network has no stems")),
        }
    }

    /// Per-pixel probabilities (`[B, w_m²]`, row-major over the label
    /// window) or, for RA-Seg, `[B,1]`. Inputs a mode does not use are
    /// ignored and may be `None`.
    pub fn forward(&self, local: Option<&Tensor<T>>, global: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let (l, g) = self.inputs(local, global)?;
        let lf = match (&self.local, l) {
            (Some(s), Some(x)) => Some(s.forward(&x)?),
            _ => None,
        };
        let gf = match (&self.global, g) {
            (Some(s), Some(x)) => Some(s.forward(&x)?),
            _ => None,
        };
        self.head.forward(&self.join(lf, gf)?)
    }

    pub fn forward_dual(&self, local: &Tensor<T>, global: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(Some(local), Some(global))
    }

    /// Stem feature vectors (`[B,F]`) for whichever stems the mode has.
    pub fn features(&self, local: Option<&Tensor<T>>, global: Option<&Tensor<T>>) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        let (l, g) = self.inputs(local, global)?;
        let lf = match (&self.local, l) {
            (Some(s), Some(x)) => Some(s.forward(&x)?),
            _ => None,
        };
        let gf = match (&self.global, g) {
            (Some(s), Some(x)) => Some(s.forward(&x)?),
            _ => None,
        };
        Ok((lf, gf))
    }

    pub fn forward_train(&self, local: Option<&Tensor<T>>, global: Option<&Tensor<T>>) -> Result<(Tensor<T>, NetTape<T>)> {
        let (l, g) = self.inputs(local, global)?;
        let (lf, lt) = match (&self.local, l) {
            (Some(s), Some(x)) => {
                let (y, t) = s.forward_train(&x)?;
                (Some(y), Some(t))
            }
            _ => (None, None),
        };
        let (gf, gt) = match (&self.global, g) {
            (Some(s), Some(x)) => {
                let (y, t) = s.forward_train(&x)?;
                (Some(y), Some(t))
            }
            _ => (None, None),
        };
        let local_width = lf.as_ref().map(|t| t.item_len()).unwrap_or(0);
        let (out, head) = self.head.forward_train(&self.join(lf, gf)?)?;
        Ok((
            out,
            NetTape {
                local: lt,
                global: gt,
                head,
                local_width,
            },
        ))
    }

    /// Parameter gradients in [`Network::params`] order.
    pub fn backward(&self, tape: NetTape<T>, dy: Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (dfeat, head_grads) = self.head.backward(tape.head, dy, true)?;
        let dfeat = dfeat.expect("head input gradient");
        let (dl, dg) = match (&tape.local, &tape.global) {
            (Some(_), Some(_)) => {
                let (a, b) = concat_backward(&dfeat, tape.local_width)?;
                (Some(a), Some(b))
            }
            (Some(_), None) => (Some(dfeat), None),
            _ => (None, Some(dfeat)),
        };
        let mut grads = Vec::new();
        if let (Some(s), Some(t), Some(d)) = (&self.local, tape.local, dl) {
            grads.extend(s.backward(t, d, false)?.1);
        }
        if let (Some(s), Some(t), Some(d)) = (&self.global, tape.global, dg) {
            grads.extend(s.backward(t, d, false)?.1);
        }
        grads.extend(head_grads);
        Ok(grads)
    }

    /// Forward + summed cross entropy + backward. Returns `(loss, grads)`.
    pub fn loss_and_grads(&self, local: Option<&Tensor<T>>, global: Option<&Tensor<T>>, target: &Tensor<T>) -> Result<(f64, Vec<Tensor<T>>)> {
        let (pred, tape) = self.forward_train(local, global)?;
        let loss = cross_entropy_loss(&pred, target)?;
        let grads = self.backward(tape, loss.grad)?;
        Ok((loss.value, grads))
    }

    /// Compares symbolic shape propagation with the shapes produced by an
    /// actual forward pass on zero inputs of batch `b`. Returns the number of
    /// layers audited.
    pub fn shape_audit(&self, b: usize) -> Result<usize> {
        let mut audited = 0;
        let mut feats = Vec::new();
        for (seq, width) in [
            (&self.local, self.profile.local_input),
            (&self.global, self.profile.global_input),
        ] {
            if let Some(seq) = seq {
                let symbolic = seq.shape_trace(&[3, width, width])?;
                let x = Tensor::zeros(&[b, 3, width, width]);
                let (y, trace) = seq.forward_traced(0, &x, true)?;
                audited += audit(&symbolic, &trace, &y, b, &seq.name)?;
                feats.push(y);
            }
        }
        let joined = match feats.len() {
            2 => concat(&feats[0], &feats[1])?,
            _ => feats.pop().ok_or_else(|| Error::invalid("no stems"))?,
        };
        let symbolic = self.head.shape_trace(&[joined.item_len()])?;
        let (y, trace) = self.head.forward_traced(0, &joined, true)?;
        audited += audit(&symbolic, &trace, &y, b, "head")?;
        if y.shape() != [b, self.output_width()] {
            return Err(Error::shape(format!("network output {:?}", y.shape())));
        }
        Ok(audited)
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::zeros(&self.profile, self.mode).expect("validated profile");
        out.input_norm = self.input_norm;
        for (dst, (_, src, _)) in out.params_mut().into_iter().zip(self.params()) {
            *dst.value = src.cast();
        }
        out
    }
}

fn audit<T: Scalar>(symbolic: &[Vec<usize>], trace: &Trace<T>, out: &Tensor<T>, b: usize, name: &str) -> Result<usize> {
    let actual: Vec<&[usize]> = trace.inputs.iter().map(|t| t.shape()).chain(std::iter::once(out.shape())).collect();
    if actual.len() != symbolic.len() {
        return Err(Error::shape(format!("{name}: layer count mismatch in shape audit")));
    }
    for (i, (a, s)) in actual.iter().zip(symbolic).enumerate() {
        if a[0] != b || &a[1..] != s.as_slice() {
            return Err(Error::shape(format!(
                "{name} layer {i}: symbolic {s:?}, actual {a:?}"
            )));
        }
    }
    Ok(symbolic.len() - 1)
}

impl Network<f32> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        let params = self.params();
        let mut named: Vec<(String, &Tensor<f32>)> = params.iter().map(|(n, t, _)| (n.clone(), *t)).collect();
        let norm = self.input_norm.to_tensor();
        if !self.input_norm.is_identity() {
            named.push((NORM_TENSOR.into(), &norm));
        }
        write_checkpoint(&mut buf, &named)?;
        std::fs::write(path, buf).map_err(|e| Error::file(path, e))
    }

    /// Loads a checkpoint; the mode is inferred from which stems it holds.
    pub fn load(path: &Path, profile: &Profile) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        let mut tensors = read_checkpoint(&mut bytes.as_slice())?;
        let norm = match tensors.iter().position(|(n, _)| n == NORM_TENSOR) {
            Some(i) => {
                let (_, t) = tensors.remove(i);
                if t.shape() != [2, 3] {
                    return Err(Error::shape(format!("{NORM_TENSOR} must be [2,3], got {:?}", t.shape())));
                }
                let d = t.data();
                Some(InputNorm {
                    mean: [d[0], d[1], d[2]],
                    scale: [d[3], d[4], d[5]],
                })
            }
            None => None,
        };
        let has = |p: &str| tensors.iter().any(|(n, _)| n.starts_with(p));
        let head_out = tensors
            .iter()
            .rev()
            .find(|(n, _)| n.starts_with("head.") && n.ends_with(".bias"))
            .map(|(_, t)| t.len());
        let mode = match (has("local."), has("global."), head_out) {
            (true, true, _) => Mode::Dual,
            (true, false, _) => Mode::LocalOnly,
            (false, true, Some(1)) => Mode::RaClassifier,
            (false, true, _) => Mode::GlobalOnly,
            _ => return Err(Error::invalid(format!("{}: checkpoint holds no stems", path.display()))),
        };
        let mut net = Network::zeros(profile, mode)?;
        net.load_tensors(tensors)?;
        net.input_norm = norm.unwrap_or_default();
        Ok(net)
    }

    pub fn load_tensors(&mut self, tensors: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, network expects {}",
                tensors.len(),
                params.len()
            )));
        }
        for (p, (name, t)) in params.iter_mut().zip(tensors) {
            if p.name != name || p.value.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name} {:?} does not match {} {:?}",
                    t.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            *p.value = t;
        }
        Ok(())
    }
}

pub fn build_lseg<T: Scalar>(profile: &Profile, seed: u64) -> Result<Network<T>> {
    Network::new(profile, Mode::LocalOnly, seed)
}

pub fn build_gseg<T: Scalar>(profile: &Profile, seed: u64) -> Result<Network<T>> {
    Network::new(profile, Mode::GlobalOnly, seed)
}

pub fn build_raseg<T: Scalar>(profile: &Profile, seed: u64) -> Result<Network<T>> {
    Network::new(profile, Mode::RaClassifier, seed)
}

pub fn build_lgseg<T: Scalar>(profile: &Profile, seed: u64) -> Result<Network<T>> {
    Network::new(profile, Mode::Dual, seed)
}

// ---------------------------------------------------------------------------
// Gradient checking

/// A 64-bit network scored with the summed cross entropy on one fixed batch.
/// Probes recompute only the stem suffix and head downstream of the
/// perturbed tensor.
pub struct NetworkLoss {
    pub net: Network<f64>,
    local: Option<Tensor<f64>>,
    global: Option<Tensor<f64>>,
    target: Tensor<f64>,
    local_trace: Option<(Trace<f64>, Tensor<f64>)>,
    global_trace: Option<(Trace<f64>, Tensor<f64>)>,
    head_trace: Trace<f64>,
    /// per tensor: (0 local / 1 global / 2 head, layer index)
    owners: Vec<(u8, usize)>,
}

impl NetworkLoss {
    pub fn new(net: Network<f64>, local: Option<Tensor<f64>>, global: Option<Tensor<f64>>, target: Tensor<f64>) -> Result<Self> {
        net.inputs(local.as_ref(), global.as_ref())?;
        let local_trace = match (&net.local, &local) {
            (Some(s), Some(x)) => Some(s.forward_traced(0, x, true).map(|(y, t)| (t, y))?),
            _ => None,
        };
        let global_trace = match (&net.global, &global) {
            (Some(s), Some(x)) => Some(s.forward_traced(0, x, true).map(|(y, t)| (t, y))?),
            _ => None,
        };
        let joined = net.join(
            local_trace.as_ref().map(|(_, y)| y.clone()),
            global_trace.as_ref().map(|(_, y)| y.clone()),
        )?;
        let (_, head_trace) = net.head.forward_traced(0, &joined, true)?;
        let mut owners = Vec::new();
        for (tag, seq) in [(0u8, &net.local), (1u8, &net.global)] {
            if let Some(s) = seq {
                for k in 0..s.params().len() {
                    owners.push((tag, s.layer_of_param(k).expect("param layer")));
                }
            }
        }
        for k in 0..net.head.params().len() {
            owners.push((2, net.head.layer_of_param(k).expect("param layer")));
        }
        Ok(NetworkLoss {
            net,
            local,
            global,
            target,
            local_trace,
            global_trace,
            head_trace,
            owners,
        })
    }
}

impl GradCheckTarget for NetworkLoss {
    fn tensors(&self) -> Vec<(String, String, usize)> {
        self.net
            .params()
            .into_iter()
            .map(|(name, t, _)| {
                let layer = name.rsplit_once('.').map(|(l, _)| l.to_string()).unwrap_or_default();
                (name, layer, t.len())
            })
            .collect()
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.net.params()[tensor].1.data()[index]
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.net.params_mut()[tensor].value.data_mut()[index] = value;
    }

    fn analytic(&self) -> Result<Vec<Tensor<f64>>> {
        Ok(self
            .net
            .loss_and_grads(self.local.as_ref(), self.global.as_ref(), &self.target)?
            .1)
    }

    fn probe(&self, tensor: usize) -> Result<Probe> {
        let (part, layer) = self.owners[tensor];
        let mut sigs = Vec::new();
        let rerun = |seq: &Sequential<f64>, cached: &(Trace<f64>, Tensor<f64>), sigs: &mut Vec<u64>| -> Result<Tensor<f64>> {
            let (y, t) = seq.forward_traced(layer, &cached.0.inputs[layer], false)?;
            sigs.extend(t.signatures);
            Ok(y)
        };
        let lf = match (part, &self.net.local, &self.local_trace) {
            (0, Some(s), Some(c)) => Some(rerun(s, c, &mut sigs)?),
            (_, _, Some(c)) => Some(c.1.clone()),
            _ => None,
        };
        let gf = match (part, &self.net.global, &self.global_trace) {
            (1, Some(s), Some(c)) => Some(rerun(s, c, &mut sigs)?),
            (_, _, Some(c)) => Some(c.1.clone()),
            _ => None,
        };
        let (start, head_in) = if part == 2 {
            (layer, self.head_trace.inputs[layer].clone())
        } else {
            (0, self.net.join(lf, gf)?)
        };
        let (pred, t) = self.net.head.forward_traced(start, &head_in, false)?;
        sigs.extend(t.signatures);
        Ok(Probe {
            terms: cross_entropy_terms(&pred, &self.target)?,
            signature: combine_signatures(&sigs),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_lseg_shape_and_count() {
        let p = Profile::desk();
        let net: Network<f32> = build_lseg(&p, 1).unwrap();
        let y = net.forward(Some(&Tensor::zeros(&[10, 3, 64, 64])), None).unwrap();
        assert_eq!(y.shape(), &[10, 256]);
        // hand count: convs 224 + 584 + 1168 + 1160, fc 2048·64+64, head 64·256+256
        assert_eq!(net.param_count(), 224 + 584 + 1168 + 1160 + 131_136 + 16_640);
        assert!(net.param_count() <= 200_000);
    }

    #[test]
    fn zero_weights_give_half() {
        let net = Network::<f32>::zeros(&Profile::desk(), Mode::LocalOnly).unwrap();
        let y = net.forward(Some(&Tensor::zeros(&[2, 3, 64, 64])), None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn modes_and_output_widths() {
        let p = Profile::desk();
        let g = Tensor::zeros(&[3, 3, 256, 256]);
        let gseg: Network<f32> = build_gseg(&p, 2).unwrap();
        assert_eq!(gseg.forward(None, Some(&g)).unwrap().shape(), &[3, 256]);
        let ra: Network<f32> = build_raseg(&p, 2).unwrap();
        assert_eq!(ra.forward(None, Some(&g)).unwrap().shape(), &[3, 1]);
        let lg: Network<f32> = build_lgseg(&p, 2).unwrap();
        let l = Tensor::zeros(&[3, 3, 64, 64]);
        assert_eq!(lg.forward_dual(&l, &g).unwrap().shape(), &[3, 256]);
        assert!(lg.forward(Some(&l), None).is_err());
        assert!(lg.forward_dual(&Tensor::zeros(&[2, 3, 64, 64]), &g).is_err());
        assert!(lg.forward_dual(&Tensor::zeros(&[3, 3, 32, 32]), &g).is_err());
    }

    #[test]
    fn shape_audit_all_modes() {
        for p in [Profile::desk(), Profile::paper_shaped()] {
            for mode in [Mode::Dual, Mode::LocalOnly, Mode::GlobalOnly, Mode::RaClassifier] {
                let net = Network::<f32>::zeros(&p, mode).unwrap();
                assert!(net.shape_audit(1).unwrap() > 0);
            }
        }
    }
}
