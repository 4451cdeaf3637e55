//! Reconstruction, content and distillation losses, as plain functions on
//! feature matrices and as graph nodes for training.

use rawvox_nn::{Graph, Real, Var};

use super::TrainingError;
use crate::audio::VocoderFeatures;
use crate::networks::ContentEmbedding;

/// Anything that can be read as a dense row-major `rows x cols` matrix.
pub trait LossOperand {
    fn dims(&self) -> (usize, usize);
    fn flat(&self) -> &[f32];
}

impl LossOperand for VocoderFeatures {
    fn dims(&self) -> (usize, usize) {
        (self.n_frames(), crate::audio::FEATURE_DIM)
    }
    fn flat(&self) -> &[f32] {
        self.values()
    }
}

impl LossOperand for ContentEmbedding {
    fn dims(&self) -> (usize, usize) {
        (self.n_codes(), self.code_dim())
    }
    fn flat(&self) -> &[f32] {
        self.values()
    }
}

/// Free-form matrix for small instances.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl LossMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, TrainingError> {
        if data.len() != rows * cols {
            return Err(TrainingError::Shape { what: "matrix data", left: (rows, cols), right: (data.len(), 1) });
        }
        Ok(Self { rows, cols, data })
    }
}

impl LossOperand for LossMatrix {
    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    fn flat(&self) -> &[f32] {
        &self.data
    }
}

fn same_dims(what: &'static str, a: &impl LossOperand, b: &impl LossOperand) -> Result<(), TrainingError> {
    if a.dims() != b.dims() {
        return Err(TrainingError::Shape { what, left: a.dims(), right: b.dims() });
    }
    Ok(())
}

fn mean_of(a: &[f32], b: &[f32], f: impl Fn(f64) -> f64) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(&x, &y)| f(x as f64 - y as f64)).sum::<f64>() / a.len() as f64
}

/// Mean squared error between decoder output and target.
pub fn decoder_loss(x_hat: &impl LossOperand, x: &impl LossOperand) -> Result<f64, TrainingError> {
    same_dims("decoder output vs target", x_hat, x)?;
    Ok(mean_of(x_hat.flat(), x.flat(), |d| d * d))
}

/// Mean absolute error between student and teacher codes.
pub fn encoder_distill_loss(c_spec: &impl LossOperand, c_avc: &impl LossOperand) -> Result<f64, TrainingError> {
    same_dims("student vs teacher codes", c_spec, c_avc)?;
    Ok(mean_of(c_spec.flat(), c_avc.flat(), f64::abs))
}

/// Reconstruction MSE plus `lambda` times the L1 gap between the codes of
/// the input and of the reconstruction.
pub fn autovc_loss(
    x: &impl LossOperand,
    x_hat: &impl LossOperand,
    c: &impl LossOperand,
    c_hat: &impl LossOperand,
    lambda: f64,
) -> Result<f64, TrainingError> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(TrainingError::Config(format!("lambda_content must be a non-negative number, got {lambda}")));
    }
    same_dims("reconstruction vs input", x_hat, x)?;
    same_dims("reconstruction codes vs codes", c_hat, c)?;
    Ok(decoder_loss(x_hat, x)? + lambda * encoder_distill_loss(c_hat, c)?)
}

pub fn autovc_loss_graph<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var, c: Var, c_hat: Var, lambda: f64) -> Var {
    let rec = g.mse(x_hat, x);
    let content = g.l1(c_hat, c);
    let content = g.scale(content, T::lit(lambda));
    g.add(rec, content)
}

pub fn decoder_loss_graph<T: Real>(g: &mut Graph<T>, x_hat: Var, x: Var) -> Var {
    g.mse(x_hat, x)
}

pub fn encoder_distill_loss_graph<T: Real>(g: &mut Graph<T>, c_spec: Var, c_avc: Var) -> Var {
    g.l1(c_spec, c_avc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f32]) -> LossMatrix {
        LossMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn fixed_points_are_zero() {
        let a = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let c = m(1, 2, &[0.1, 0.2]);
        assert_eq!(decoder_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(encoder_distill_loss(&c, &c).unwrap(), 0.0);
        assert_eq!(autovc_loss(&a, &a, &c, &c, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_offsets() {
        let x = m(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
        let x2 = m(2, 3, &x.data.iter().map(|v| v + 2.0).collect::<Vec<_>>());
        assert!((decoder_loss(&x2, &x).unwrap() - 4.0).abs() < 1e-12);
        let c = m(2, 2, &[0.0, 1.0, -1.0, 0.25]);
        let c2 = m(2, 2, &c.data.iter().map(|v| v + 0.3).collect::<Vec<_>>());
        assert!((encoder_distill_loss(&c2, &c).unwrap() - 0.3).abs() < 1e-6);
        // 4 + 0.5 * 0.3
        assert!((autovc_loss(&x, &x2, &c, &c2, 0.5).unwrap() - 4.15).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_and_bad_lambda() {
        let a = m(2, 3, &[0.0; 6]);
        let b = m(3, 2, &[0.0; 6]);
        assert!(matches!(decoder_loss(&a, &b), Err(TrainingError::Shape { .. })));
        assert!(encoder_distill_loss(&a, &b).is_err());
        assert!(autovc_loss(&a, &a, &a, &a, -1.0).is_err());
        assert!(LossMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn graph_forms_match_values() {
        let mut g = Graph::<f64>::eval();
        let t = |v: &[f64]| rawvox_nn::Tensor::from_vec(&[1, 2, 2], v.to_vec());
        let x = g.input(t(&[1.0, 2.0, 3.0, 4.0]));
        let xh = g.input(t(&[1.5, 2.0, 2.0, 4.0]));
        let c = g.input(t(&[0.0, 0.0, 1.0, 1.0]));
        let ch = g.input(t(&[0.2, 0.0, 1.0, 0.6]));
        let l = autovc_loss_graph(&mut g, x, xh, c, ch, 1.0);
        // (0.25 + 1) / 4 + (0.2 + 0.4) / 4
        assert!((g.value(l).item() - 0.4625).abs() < 1e-12);
    }
}
