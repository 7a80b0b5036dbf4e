//! Central finite-difference checks of autograd gradients.

use candle_core::{DType, Tensor, Var};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gradient norms below this are compared in absolute terms, so exactly
/// vanishing gradients are not judged against finite-difference round-off.
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, ABS_FLOOR)` over
    /// the checked coordinates.
    pub fn relative_error(&self) -> f64 {
        let diff: f64 = self.analytic.iter().zip(&self.numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = self.analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = self.numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(ABS_FLOOR)
    }
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Compares the autograd gradient of `loss` with respect to each variable
/// against central differences with step `h` at up to `max_coords`
/// randomly chosen coordinates per variable.
pub fn check_gradients<F>(vars: &[(String, Var)], loss: F, h: f64, max_coords: usize, seed: u64) -> Result<Vec<GradCheck>>
where
    F: Fn() -> Result<Tensor>,
{
    let l = loss()?;
    let grads = l.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(vars.len());
    for (name, var) in vars {
        if var.dtype() != DType::F64 {
            return Err(Error::input("finite-difference checks need f64 parameters"));
        }
        let shape = var.shape().clone();
        let original = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let analytic_all = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; original.len()],
        };
        let coords = if original.len() <= max_coords {
            (0..original.len()).collect::<Vec<_>>()
        } else {
            sample(&mut rng, original.len(), max_coords).into_vec()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        let mut buf = original.clone();
        for &i in &coords {
            buf[i] = original[i] + h;
            var.set(&Tensor::from_vec(buf.clone(), shape.clone(), var.device())?)?;
            let plus = scalar(&loss()?)?;
            buf[i] = original[i] - h;
            var.set(&Tensor::from_vec(buf.clone(), shape.clone(), var.device())?)?;
            let minus = scalar(&loss()?)?;
            buf[i] = original[i];
            numeric.push((plus - minus) / (2.0 * h));
            analytic.push(analytic_all[i]);
        }
        var.set(&Tensor::from_vec(original, shape, var.device())?)?;
        out.push(GradCheck { name: name.clone(), analytic, numeric });
    }
    Ok(out)
}

/// Largest relative error over a set of checks.
pub fn worst(checks: &[GradCheck]) -> f64 {
    checks.iter().map(GradCheck::relative_error).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cubic_gradient_matches() {
        let v = Var::from_tensor(&Tensor::new(&[0.3f64, -1.2, 2.0], &Device::Cpu).unwrap()).unwrap();
        let vars = vec![("v".to_string(), v.clone())];
        let checks = check_gradients(&vars, || Ok(v.as_tensor().sqr()?.mul(v.as_tensor())?.sum_all()?), 1e-4, 10, 0).unwrap();
        assert!(worst(&checks) < 1e-7);
        assert_eq!(checks[0].analytic.len(), 3);
    }
}
