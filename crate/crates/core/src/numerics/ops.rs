use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `softmax(a * row)`, max-subtracted.
pub fn scaled_softmax(row: &[f64], a: f64) -> Result<Vec<f64>> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("softmax input has non-finite entries".into()));
    }
    if !(a > 0.0 && a.is_finite()) {
        return Err(Error::Parameter(format!("softmax scale must be > 0, got {a}")));
    }
    Ok(softmax_in_place(row.iter().map(|v| a * v).collect()))
}

pub(crate) fn softmax_in_place(mut xs: Vec<f64>) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
    xs
}

/// `log_softmax` of a slice, max-subtracted.
pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - lse).collect()
}

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let d = x.len();
    if d == 0 || gain.len() != d || bias.len() != d {
        return Err(Error::Dimension(format!(
            "layer norm over {} values with gain {} and bias {}",
            d,
            gain.len(),
            bias.len()
        )));
    }
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    Ok(x
        .iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| g * (v - mean) * inv + b)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Uniform,
    Normal,
}

/// Xavier/Glorot initialisation for a 2-D `fan_in x fan_out` shape.
///
/// Shapes with more than two axes are treated as `shape[0]` inputs and
/// `shape[last]` outputs per slice.
pub fn xavier_init(shape: &[usize], mode: InitMode, rng: &mut SeededRng) -> Result<Tensor> {
    if shape.len() < 2 {
        return Err(Error::Dimension(format!(
            "xavier init needs a matrix shape, got {shape:?}"
        )));
    }
    let fan_in = shape[0];
    let fan_out = *shape.last().unwrap();
    let len: usize = shape.iter().product();
    let denom = (fan_in + fan_out) as f64;
    let data = match mode {
        InitMode::Uniform => {
            let bound = (6.0 / denom).sqrt();
            (0..len).map(|_| rng.uniform(-bound, bound)).collect()
        }
        InitMode::Normal => {
            let std = (2.0 / denom).sqrt();
            (0..len).map(|_| std * rng.normal()).collect()
        }
    };
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = scaled_softmax(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = scaled_softmax(&[8.0, 0.0], 1.0 / 4f64.sqrt()).unwrap();
        let e4 = 4f64.exp();
        assert!((p[0] - e4 / (e4 + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.98201).abs() < 1e-5);
        assert!((p[1] - 0.01799).abs() < 1e-5);
        assert!(scaled_softmax(&[f64::NAN], 1.0).is_err());
        assert!(scaled_softmax(&[1.0], 0.0).is_err());
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let p = scaled_softmax(&[1000.0, 999.0, -1000.0], 1.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn layer_norm_examples() {
        let z = layer_norm(&[3.0; 4], &[1.0; 4], &[0.0; 4]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        let y = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2]).unwrap();
        let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((y[0] - expect).abs() < 1e-15 && (y[1] + expect).abs() < 1e-15);
        assert!((y[0] - 1.0).abs() < 1e-5);
        let shifted = layer_norm(&[11.0, 9.0], &[1.0; 2], &[0.0; 2]).unwrap();
        assert!((shifted[0] - y[0]).abs() < 1e-12);
    }

    #[test]
    fn xavier_bounds_and_determinism() {
        let mut rng = SeededRng::new(1);
        let t = xavier_init(&[100, 100], InitMode::Uniform, &mut rng).unwrap();
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        let again = xavier_init(&[100, 100], InitMode::Uniform, &mut SeededRng::new(1)).unwrap();
        assert_eq!(t, again);

        let n = xavier_init(&[200, 200], InitMode::Normal, &mut rng).unwrap();
        let mean = n.data().iter().sum::<f64>() / n.len() as f64;
        let var = n.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
        let target = 2.0 / 400.0;
        assert!((var - target).abs() < 0.1 * target, "{var}");
    }
}
