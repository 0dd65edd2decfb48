//! Central finite-difference gradient verification (64-bit).

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::nn::loss::cross_entropy_terms;
use crate::nn::sequential::Sequential;
use crate::tensor::Tensor;

/// Loss terms and activation signature of one forward evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub terms: Vec<f64>,
    pub signature: u64,
}

/// Anything whose scalar objective (a sum of terms) can be probed at
/// perturbed parameter values.
pub trait GradCheckTarget {
    /// `(tensor name, layer key, element count)` for every checked tensor.
    fn tensors(&self) -> Vec<(String, String, usize)>;
    fn get(&self, tensor: usize, index: usize) -> f64;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
    /// Analytic gradient, one tensor per entry of [`GradCheckTarget::tensors`].
    fn analytic(&self) -> Result<Vec<Tensor<f64>>>;
    /// Re-evaluates the objective after `tensor` changed. Implementations may
    /// recompute only the part of the graph downstream of that tensor.
    fn probe(&self, tensor: usize) -> Result<Probe>;
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|`; bounded below by forward-pass roundoff
    /// divided by 2ε, whatever the gradient's size.
    pub max_abs_error: f64,
    pub checked: usize,
    /// Positions whose ±ε probes changed an activation pattern (ReLU kink,
    /// pooling switch, clamp edge); finite differences are invalid there.
    pub skipped_kinks: usize,
    pub worst: Option<Worst>,
}

#[derive(Clone, Debug)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares analytic gradients against `(f(θ+ε) − f(θ−ε)) / 2ε` on a random
/// subsample of at least `per_layer` positions per layer (all positions when
/// a layer has fewer). Terms are differenced pairwise before summation.
pub fn grad_check<G: GradCheckTarget, R: Rng + ?Sized>(
    target: &mut G,
    eps: f64,
    per_layer: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let tensors = target.tensors();
    let analytic = target.analytic()?;
    let mut report = GradCheckReport::default();

    let mut layers: Vec<String> = Vec::new();
    for (_, layer, _) in &tensors {
        if !layers.contains(layer) {
            layers.push(layer.clone());
        }
    }
    let mut baseline: Vec<Option<u64>> = vec![None; tensors.len()];

    for layer in &layers {
        let mut positions: Vec<(usize, usize)> = tensors
            .iter()
            .enumerate()
            .filter(|(_, (_, l, _))| l == layer)
            .flat_map(|(t, (_, _, n))| (0..*n).map(move |i| (t, i)))
            .collect();
        positions.shuffle(rng);
        let mut done = 0;
        for (t, i) in positions {
            if done >= per_layer {
                break;
            }
            let sig0 = match baseline[t] {
                Some(s) => s,
                None => {
                    let s = target.probe(t)?.signature;
                    baseline[t] = Some(s);
                    s
                }
            };
            let orig = target.get(t, i);
            target.set(t, i, orig + eps);
            let plus = target.probe(t)?;
            target.set(t, i, orig - eps);
            let minus = target.probe(t)?;
            target.set(t, i, orig);
            if plus.signature != sig0 || minus.signature != sig0 {
                report.skipped_kinks += 1;
                continue;
            }
            let diff: f64 = plus.terms.iter().zip(&minus.terms).map(|(p, m)| p - m).sum();
            let numeric = diff / (2.0 * eps);
            let a = analytic[t].data()[i];
            let err = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(Worst {
                    tensor: tensors[t].0.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
            report.checked += 1;
            done += 1;
        }
    }
    Ok(report)
}

/// A [`Sequential`] scored with the summed cross entropy against fixed targets.
pub struct SequentialLoss {
    pub net: Sequential<f64>,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
}

impl GradCheckTarget for SequentialLoss {
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
        let (pred, tape) = self.net.forward_train(&self.input)?;
        let loss = crate::nn::loss::cross_entropy_loss(&pred, &self.target)?;
        Ok(self.net.backward(tape, loss.grad, false)?.1)
    }

    fn probe(&self, _tensor: usize) -> Result<Probe> {
        let (pred, trace) = self.net.forward_traced(0, &self.input, false)?;
        Ok(Probe {
            terms: cross_entropy_terms(&pred, &self.target)?,
            signature: combine_signatures(&trace.signatures),
        })
    }
}

pub fn combine_signatures(sigs: &[u64]) -> u64 {
    sigs.iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &s| (h ^ s).wrapping_mul(0x0100_0000_01b3))
}
