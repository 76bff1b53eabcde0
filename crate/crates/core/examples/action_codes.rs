//! Encode, normalize and decode action codes.

use mlsgan::codes::{decode, denormalize, encode_ground_truth, normalize};

fn main() -> mlsgan::Result<()> {
    let k = 4;
    for class in 0..k {
        let code = encode_ground_truth(class, k)?;
        let internal = normalize(&code)?;
        let back = denormalize(&internal)?;
        println!("class {class} code {code:?} internal {internal:?} decoded {}", decode(&back));
    }
    // a soft code from the generator decodes to its largest entry
    let soft = [0.2, 0.7, 0.69, 0.1];
    println!("soft {soft:?} -> {}", decode(&soft));
    // out of range input is rejected
    println!("{}", normalize(&[300.0, 0.0]).unwrap_err());
    Ok(())
}
