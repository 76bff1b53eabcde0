//! Run the finite-difference suite, then again with a sign flip injected
//! into the gated fusion backward pass.

use mlsgan::gradsuite::{run_grad_suite, GradSuiteOptions};

fn main() -> mlsgan::Result<()> {
    let clean = run_grad_suite(&GradSuiteOptions::default())?;
    print!("{}", clean.to_text());
    println!("passed {}", clean.passed());

    let faulty = run_grad_suite(&GradSuiteOptions {
        inject_sign_flip: true,
        ..Default::default()
    })?;
    for c in faulty.failed() {
        println!("flagged {} max_rel_error {:.3e}", c.name, c.max_rel_error);
    }
    Ok(())
}
