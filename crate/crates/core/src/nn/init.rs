//! Xavier (Glorot) uniform initialisation.

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

/// `(fan_in, fan_out)` for a `[out, in]` dense or `[out, in, kh, kw]` conv weight.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Samples `U(−b, b)` with `b = √(6/(fan_in+fan_out))`. Values are drawn in
/// f64 and rounded, so f32 and f64 networks built from one seed agree.
pub fn xavier_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let (fi, fo) = fans(shape);
    let b = xavier_bound(fi, fo);
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-b..=b)))
}
