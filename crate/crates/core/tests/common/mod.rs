//! Slow, obviously-correct reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

use aeroseg::data::Mask;
use aeroseg::nn::gradcheck::{grad_check, GradCheckReport, GradCheckTarget, Probe};
use aeroseg::nn::sequential::{Layer, Sequential};
use aeroseg::nn::ConvSpec;
use aeroseg::{Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

// Layers

/// Direct seven-loop convolution; returns `(y, dx, dw, db)` for upstream `dy`.
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    s: &ConvSpec,
    dy: Option<&Tensor<f64>>,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kh, kw, st, p) = (s.kernel_h as isize, s.kernel_w as isize, s.stride as isize, s.pad as isize);
    let ho = ((h as isize + 2 * p - kh) / st + 1) as usize;
    let wo = ((wd as isize + 2 * p - kw) / st + 1) as usize;
    let co = s.out_channels;
    let mut y = Tensor::zeros(&[n, co, ho, wo]);
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(b.shape());
    let xi = |i: usize, ch: usize, r: usize, cc: usize| ((i * c + ch) * h + r) * wd + cc;
    let wi = |o: usize, ch: usize, a: usize, bb: usize| ((o * c + ch) * s.kernel_h + a) * s.kernel_w + bb;
    for i in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let yi = ((i * co + o) * ho + oy) * wo + ox;
                    let g = dy.map_or(0.0, |d| d.data()[yi]);
                    let mut acc = b.data()[o];
                    db.data_mut()[o] += g;
                    for ch in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let r = oy as isize * st + a - p;
                                let cc = ox as isize * st + bb - p;
                                if r < 0 || cc < 0 || r >= h as isize || cc >= wd as isize {
                                    continue;
                                }
                                let (xk, wk) = (xi(i, ch, r as usize, cc as usize), wi(o, ch, a as usize, bb as usize));
                                acc += x.data()[xk] * w.data()[wk];
                                dx.data_mut()[xk] += g * w.data()[wk];
                                dw.data_mut()[wk] += g * x.data()[xk];
                            }
                        }
                    }
                    y.data_mut()[yi] = acc;
                }
            }
        }
    }
    (y, dx, dw, db)
}

/// Max pooling by scanning each window in row-major order and keeping the
/// first strict maximum.
pub fn pool_oracle(x: &Tensor<f64>, k: usize) -> (Tensor<f64>, Vec<usize>) {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / k, w / k);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = Vec::new();
    for i in 0..n * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = (f64::NEG_INFINITY, 0);
                for a in 0..k {
                    for b in 0..k {
                        let idx = (i * h + oy * k + a) * w + ox * k + b;
                        if x.data()[idx] > best.0 {
                            best = (x.data()[idx], idx);
                        }
                    }
                }
                y.data_mut()[(i * ho + oy) * wo + ox] = best.0;
                arg.push(best.1);
            }
        }
    }
    (y, arg)
}

pub fn dense_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, f) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    Tensor::from_fn(&[n, o], |k| {
        let (i, j) = (k / o, k % o);
        b.data()[j] + (0..f).map(|q| w.data()[j * f + q] * x.data()[i * f + q]).sum::<f64>()
    })
}

// Metrics and components

/// Relaxed correctness and completeness by comparing every pair of pixels.
pub fn relaxed_oracle(pred: &Mask, gt: &Mask, rho: usize) -> (f64, f64) {
    let pts = |m: &Mask| -> Vec<(i64, i64)> {
        (0..m.height)
            .flat_map(|r| (0..m.width).map(move |c| (r, c)))
            .filter(|&(r, c)| m.get(r, c))
            .map(|(r, c)| (r as i64, c as i64))
            .collect()
    };
    let (p, g) = (pts(pred), pts(gt));
    let r2 = (rho * rho) as i64;
    let near = |a: &(i64, i64), set: &[(i64, i64)]| set.iter().any(|b| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2) <= r2);
    let frac = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        if from.is_empty() {
            1.0
        } else {
            from.iter().filter(|a| near(a, to)).count() as f64 / from.len() as f64
        }
    };
    (frac(&p, &g), frac(&g, &p))
}

/// 8-connected labelling by repeated breadth-first flood fill. Returns the
/// sorted pixel lists of all components.
pub fn flood_fill_components(m: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (m.height, m.width);
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) || label[r * w + c] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut queue = std::collections::VecDeque::from([(r, c)]);
            label[r * w + c] = id;
            let mut px = Vec::new();
            while let Some((y, x)) = queue.pop_front() {
                px.push((y, x));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if m.get(ny, nx) && label[ny * w + nx] == usize::MAX {
                            label[ny * w + nx] = id;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            px.sort_unstable();
            out.push(px);
        }
    }
    out
}

pub fn random_mask(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    Mask::from_raw(h, w, (0..h * w).map(|_| rng.gen_bool(density) as u8).collect()).unwrap()
}

// Gradient checking of a single layer

/// One layer scored by a fixed random linear functional `Σ r·y`; the layer
/// input is checked alongside the parameters.
pub struct SingleLayer {
    pub seq: Sequential<f64>,
    pub input: Tensor<f64>,
    pub weights: Tensor<f64>,
}

impl SingleLayer {
    pub fn new(layer: Layer<f64>, input_shape: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut seq = Sequential::new("t");
        seq.push("l", layer);
        for p in seq.params_mut() {
            *p.value = uniform(p.value.shape(), rng, -1.0, 1.0);
        }
        let input = uniform(input_shape, rng, -1.0, 1.0);
        let out = seq.forward(&input).unwrap();
        let weights = uniform(out.shape(), rng, -1.0, 1.0);
        SingleLayer { seq, input, weights }
    }
}

impl GradCheckTarget for SingleLayer {
    fn tensors(&self) -> Vec<(String, String, usize)> {
        let mut v = vec![("input".to_string(), "input".to_string(), self.input.len())];
        for (n, t, _) in self.seq.params() {
            v.push((n, "l".into(), t.len()));
        }
        v
    }

    fn get(&self, t: usize, i: usize) -> f64 {
        if t == 0 {
            self.input.data()[i]
        } else {
            self.seq.params()[t - 1].1.data()[i]
        }
    }

    fn set(&mut self, t: usize, i: usize, v: f64) {
        if t == 0 {
            self.input.data_mut()[i] = v;
        } else {
            self.seq.params_mut()[t - 1].value.data_mut()[i] = v;
        }
    }

    fn analytic(&self) -> Result<Vec<Tensor<f64>>> {
        let (_, tape) = self.seq.forward_train(&self.input)?;
        let (dx, grads) = self.seq.backward(tape, self.weights.clone(), true)?;
        let mut v = vec![dx.unwrap()];
        v.extend(grads);
        Ok(v)
    }

    fn probe(&self, _t: usize) -> Result<Probe> {
        let (y, trace) = self.seq.forward_traced(0, &self.input, false)?;
        Ok(Probe {
            terms: y.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).collect(),
            signature: aeroseg::nn::gradcheck::combine_signatures(&trace.signatures),
        })
    }
}

pub fn check_layer(layer: Layer<f64>, shape: &[usize], seed: u64, eps: f64) -> GradCheckReport {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = SingleLayer::new(layer, shape, &mut rng);
    grad_check(&mut target, eps, 200, &mut rng).unwrap()
}

/// One instance of every layer kind, with an input shape.
pub fn layer_cases() -> Vec<(&'static str, Layer<f64>, Vec<usize>)> {
    use aeroseg::nn::LayerSpec;
    vec![
        ("conv3x3", Layer::from_spec(LayerSpec::Conv(ConvSpec::square(3, 4, 3, 1, 1))), vec![2, 3, 8, 8]),
        ("conv7s4", Layer::from_spec(LayerSpec::Conv(ConvSpec::square(2, 3, 7, 4, 3))), vec![2, 2, 16, 16]),
        ("maxpool", Layer::from_spec(LayerSpec::MaxPool { size: 2 }), vec![2, 3, 6, 6]),
        ("relu", Layer::Relu, vec![3, 40]),
        ("sigmoid", Layer::Sigmoid, vec![3, 40]),
        ("dense", Layer::from_spec(LayerSpec::FullyConnected { fan_in: 30, fan_out: 7 }), vec![4, 30]),
    ]
}

/// Inputs for the whole-network checks have unit variance per channel, like
/// standardised pixels.
pub const INPUT_LIM: f64 = 1.7320508075688772;

pub fn lgseg_check(seed: u64, eps: f64) -> GradCheckReport {
    use aeroseg::arch::{build_lgseg, Network, NetworkLoss, Profile};
    use rand::SeedableRng;
    let net: Network<f64> = build_lgseg(&Profile::desk(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let local = uniform(&[1, 3, 64, 64], &mut rng, -INPUT_LIM, INPUT_LIM);
    let global = uniform(&[1, 3, 256, 256], &mut rng, -INPUT_LIM, INPUT_LIM);
    let target = Tensor::from_fn(&[1, 256], |_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
    let mut problem = NetworkLoss::new(net, Some(local), Some(global), target).unwrap();
    grad_check(&mut problem, eps, 200, &mut rng).unwrap()
}
