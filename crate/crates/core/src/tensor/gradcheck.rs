//! Central finite-difference oracle for gradients computed on a [`Tape`].

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Worst disagreement for one parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamGradError {
    pub index: usize,
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, 1e-8)`.
    pub rel_error: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamGradError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamGradError> {
        self.params.iter().filter(|p| p.rel_error >= self.tolerance)
    }
}

fn evaluate<F>(f: &F, params: &[Tensor], requires_grad: bool) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone(), requires_grad))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    Ok((tape, vars, out))
}

/// Value of `f` and its reverse-mode gradient with respect to each input.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = evaluate(f, params, true)?;
    tape.backward(out)?;
    let value = tape.value(out).item()?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            tape.grad(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();
    Ok((value, grads))
}

/// Central differences `(f(p+ε) − f(p−ε)) / 2ε`, one element at a time.
pub fn numeric_gradients<F>(f: &F, params: &[Tensor], epsilon: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::contract(format!(
            "finite-difference epsilon {epsilon} outside (0, 1e-2]"
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut grad = Tensor::zeros(params[pi].shape().to_vec());
        for i in 0..params[pi].numel() {
            let orig = params[pi].data()[i];
            work[pi].data_mut()[i] = orig + epsilon;
            let (tape, _, o) = evaluate(f, &work, false)?;
            let plus = tape.value(o).item()?;
            work[pi].data_mut()[i] = orig - epsilon;
            let (tape, _, o) = evaluate(f, &work, false)?;
            let minus = tape.value(o).item()?;
            work[pi].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
        }
        out.push(grad);
    }
    Ok(out)
}

pub fn compare_gradients(analytic: &[Tensor], numeric: &[Tensor], tolerance: f64) -> GradCheckReport {
    let params = analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(index, (a, n))| {
            let abs_error = a
                .data()
                .iter()
                .zip(n.data())
                .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()));
            let scale = a.max_abs().max(n.max_abs()).max(1e-8);
            ParamGradError {
                index,
                rel_error: abs_error / scale,
                abs_error,
            }
        })
        .collect();
    GradCheckReport { params, tolerance }
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central finite differences at `params`.
///
/// `f` receives one [`Var`] per entry of `params`, in order, and must be
/// deterministic. Failures are reported, not raised.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let numeric = numeric_gradients(&f, params, epsilon)?;
    let (_, analytic) = analytic_gradients(&f, params)?;
    Ok(compare_gradients(&analytic, &numeric, tolerance))
}
