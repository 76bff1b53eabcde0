use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{bce_loss, categorical_ce_loss};
use crate::tensor::{Tape, Var};

/// Discriminator objective on a half-real, half-generated batch:
/// `BCE(real → 1) + BCE(fake → 0) + λ·CE(class_probs_real, labels)`.
///
/// The class term only sees the ground-truth half.
pub fn d_loss(
    tape: &mut Tape,
    p_real_on_real: Var,
    p_real_on_fake: Var,
    class_probs_real: Var,
    labels: &[usize],
    lambda_c: f64,
) -> Result<Var> {
    let ones = vec![1.0; tape.value(p_real_on_real).numel()];
    let zeros = vec![0.0; tape.value(p_real_on_fake).numel()];
    let real = bce_loss(tape, p_real_on_real, &ones)?;
    let fake = bce_loss(tape, p_real_on_fake, &zeros)?;
    let ce = categorical_ce_loss(tape, class_probs_real, labels)?;
    let weighted = tape.scale(ce, lambda_c)?;
    tape.add_n(&[real, fake, weighted])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GLossOptions {
    /// Maximize `log D(fake)` instead of minimizing `log(1 − D(fake))`.
    pub non_saturating: bool,
    /// Include the class term for generated codes.
    pub class_term: bool,
}

impl Default for GLossOptions {
    fn default() -> Self {
        Self {
            non_saturating: true,
            class_term: true,
        }
    }
}

/// Generator objective on generated codes:
/// `BCE(fake → 1) + λ·CE(class_probs_fake, labels)` in the non-saturating
/// form, or `E[log(1 − D(fake))] + λ·CE` in the literal min-max form.
pub fn g_loss(
    tape: &mut Tape,
    p_real_on_fake: Var,
    class_probs_fake: Var,
    labels: &[usize],
    lambda_c: f64,
    opts: GLossOptions,
) -> Result<Var> {
    let n = tape.value(p_real_on_fake).numel();
    let adversarial = if opts.non_saturating {
        bce_loss(tape, p_real_on_fake, &vec![1.0; n])?
    } else {
        let as_fake = bce_loss(tape, p_real_on_fake, &vec![0.0; n])?;
        tape.scale(as_fake, -1.0)?
    };
    if !opts.class_term {
        return Ok(adversarial);
    }
    let ce = categorical_ce_loss(tape, class_probs_fake, labels)?;
    let weighted = tape.scale(ce, lambda_c)?;
    tape.add_n(&[adversarial, weighted])
}
