//! Fuse three streams of different widths and inspect the gate values.

use mlsgan::fusion::GatedFusionUnit;
use mlsgan::nn::ParamStore;
use mlsgan::seed::substream;
use mlsgan::tensor::{Tape, Tensor};

fn main() -> mlsgan::Result<()> {
    let mut store = ParamStore::new();
    let mut rng = substream(7, "example", 0);
    let gfu = GatedFusionUnit::new(&mut store, "gfu", &[3, 2, 4], 5, &mut rng)?;

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let streams = [
        tape.constant(Tensor::from_rows(&[&[1.0, 0.0, -1.0]])?),
        tape.constant(Tensor::from_rows(&[&[0.5, 0.5]])?),
        // an all-zero stream, like a dummy person slot
        tape.constant(Tensor::zeros([1, 4])),
    ];
    let out = gfu.forward(&mut tape, &p, &streams)?;
    println!("fused {:?}", tape.value(out.fused).data());
    for (n, q) in out.gates.iter().enumerate() {
        let g = tape.value(*q).data();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        println!("stream {n} mean gate {mean:.4}");
    }
    Ok(())
}
