use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before `log`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy `−[t·log p + (1−t)·log(1−p)]`.
///
/// `targets` holds one value per element of `p`.
pub fn bce_loss(tape: &mut Tape, p: Var, targets: &[f64]) -> Result<Var> {
    let shape = tape.shape(p).to_vec();
    if tape.value(p).numel() != targets.len() {
        return Err(Error::dim(
            "bce_loss",
            format!("{} targets for predictions of shape {shape:?}", targets.len()),
        ));
    }
    let t = tape.constant(Tensor::new(shape.clone(), targets.to_vec())?);
    let one_minus_t = tape.constant(Tensor::new(
        shape,
        targets.iter().map(|v| 1.0 - v).collect(),
    )?);
    let clamped = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let log_p = tape.log(clamped)?;
    let neg = tape.scale(clamped, -1.0)?;
    let q = tape.add_scalar(neg, 1.0)?;
    let log_q = tape.log(q)?;
    let pos_term = tape.mul(t, log_p)?;
    let neg_term = tape.mul(one_minus_t, log_q)?;
    let both = tape.add(pos_term, neg_term)?;
    let avg = tape.mean(both, None)?;
    tape.scale(avg, -1.0)
}

/// Mean of `−log probs[i, labels[i]]` over the batch.
pub fn categorical_ce_loss(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim(
            "categorical_ce_loss",
            format!("{} labels for probabilities of shape {shape:?}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {} classes",
            shape[1]
        )));
    }
    let picked = tape.gather(probs, labels)?;
    let clamped = tape.clamp(picked, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let logs = tape.log(clamped)?;
    let avg = tape.mean(logs, None)?;
    tape.scale(avg, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn bce(p: &[f64], t: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::vector(p.to_vec()));
        let l = bce_loss(&mut tape, pv, t).unwrap();
        tape.value(l).item().unwrap()
    }

    fn ce(rows: &[&[f64]], labels: &[usize]) -> f64 {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::from_rows(rows).unwrap());
        let l = categorical_ce_loss(&mut tape, pv, labels).unwrap();
        tape.value(l).item().unwrap()
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce(&[0.5], &[1.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((bce(&[0.5], &[0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!(bce(&[1.0, 0.0], &[1.0, 0.0]) < 1e-6);
        assert!(bce(&[0.3, 0.9], &[1.0, 0.0]) > 0.0);
    }

    #[test]
    fn ce_reference_values() {
        let uniform = [0.2; 5];
        assert!((ce(&[&uniform], &[3]) - 5f64.ln()).abs() < 1e-15);
        assert!(ce(&[&[0.0, 1.0, 0.0]], &[1]) < 1e-6);
        // −(ln 0.7 + ln 0.25)/2 by hand
        let expected = -(0.7f64.ln() + 0.25f64.ln()) / 2.0;
        let got = ce(&[&[0.7, 0.2, 0.1], &[0.5, 0.25, 0.25]], &[0, 2]);
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn ce_label_out_of_range() {
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::from_rows(&[&[0.5, 0.5]]).unwrap());
        assert!(matches!(
            categorical_ce_loss(&mut tape, pv, &[2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn bce_gradient() {
        let report = finite_diff_check(
            |tape, v| bce_loss(tape, v[0], &[1.0, 0.0, 1.0]),
            &[Tensor::vector(vec![0.2, 0.6, 0.9])],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn ce_gradient_through_softmax() {
        let report = finite_diff_check(
            |tape, v| {
                let p = tape.softmax(v[0])?;
                categorical_ce_loss(tape, p, &[2, 0])
            },
            &[Tensor::matrix(2, 3, vec![0.1, -0.4, 0.8, 1.2, 0.3, -0.9]).unwrap()],
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
