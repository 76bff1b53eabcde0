//! Build a small graph on the tape, run backward, and compare the result
//! with central finite differences.

use mlsgan::tensor::{finite_diff_check, Tape, Tensor};

fn main() -> mlsgan::Result<()> {
    let x = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]])?;
    let w = Tensor::from_rows(&[&[0.1, 0.2, 0.3], &[-0.4, 0.5, -0.6]])?;
    let b = Tensor::vector(vec![0.05, -0.05]);

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let bv = tape.param(b.clone());
    let pre = tape.linear(xv, wv, Some(bv))?;
    let act = tape.tanh(pre)?;
    let loss = tape.mean(act, None)?;
    tape.backward(loss)?;

    println!("loss {:.6}", tape.value(loss).item()?);
    println!("dW {:?}", tape.grad(wv).unwrap().data());
    println!("db {:?}", tape.grad(bv).unwrap().data());

    let report = finite_diff_check(
        |t, p| {
            let xv = t.constant(x.clone());
            let pre = t.linear(xv, p[0], Some(p[1]))?;
            let act = t.tanh(pre)?;
            t.mean(act, None)
        },
        &[w, b],
        1e-6,
        1e-5,
    )?;
    println!("finite-difference max_rel_error {:.2e} passed {}", report.max_rel_error(), report.passed());
    Ok(())
}
