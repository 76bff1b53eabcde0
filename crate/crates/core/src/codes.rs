//! Action codes: length-`k` vectors describing a group activity.
//!
//! Externally a code lives in `[0, 255]`; the networks work on the
//! normalized `[0, 1]` form. Ground-truth codes are scaled one-hot vectors.

use crate::error::{Error, Result};

/// Peak value of a code in external form.
pub const CODE_MAX: f64 = 255.0;

const RANGE_SLACK: f64 = 1e-9;

/// External-form code for `class_id`: 255 at the class index, 0 elsewhere.
pub fn encode_ground_truth(class_id: usize, k: usize) -> Result<Vec<f64>> {
    if class_id >= k {
        return Err(Error::contract(format!(
            "class {class_id} out of range for {k} classes"
        )));
    }
    let mut code = vec![0.0; k];
    code[class_id] = CODE_MAX;
    Ok(code)
}

/// Normalized ground-truth code, the form the discriminator sees.
pub fn ground_truth_internal(class_id: usize, k: usize) -> Result<Vec<f64>> {
    normalize(&encode_ground_truth(class_id, k)?)
}

/// Index of the largest component; ties go to the lowest index.
pub fn decode(code: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in code.iter().enumerate() {
        if v > code[best] {
            best = i;
        }
    }
    best
}

pub fn normalize(code: &[f64]) -> Result<Vec<f64>> {
    check_range(code, CODE_MAX, "normalize")?;
    Ok(code.iter().map(|v| v / CODE_MAX).collect())
}

pub fn denormalize(internal: &[f64]) -> Result<Vec<f64>> {
    check_range(internal, 1.0, "denormalize")?;
    Ok(internal.iter().map(|v| v * CODE_MAX).collect())
}

fn check_range(values: &[f64], hi: f64, op: &str) -> Result<()> {
    let slack = RANGE_SLACK * hi / CODE_MAX;
    match values
        .iter()
        .find(|v| !(**v >= -slack && **v <= hi + slack))
    {
        Some(bad) => Err(Error::contract(format!("{op}: value {bad} outside [0, {hi}]"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn reference_codes() {
        let c = encode_ground_truth(5, 7).unwrap();
        assert_eq!(c, vec![0.0, 0.0, 0.0, 0.0, 0.0, 255.0, 0.0]);
        assert_eq!(encode_ground_truth(0, 1).unwrap(), vec![255.0]);
        assert!(matches!(encode_ground_truth(3, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn decode_rules() {
        assert_eq!(decode(&[0.0, 255.0, 0.0]), 1);
        assert_eq!(decode(&[7.0, 7.0, 7.0]), 0);
        assert_eq!(decode(&[10.0, 200.0, 45.0]), 1);
        assert_eq!(decode(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn normalization_fixed_points() {
        for (ext, int) in [(255.0, 1.0), (0.0, 0.0), (127.5, 0.5)] {
            assert_eq!(normalize(&[ext]).unwrap(), vec![int]);
            assert_eq!(denormalize(&[int]).unwrap(), vec![ext]);
        }
        assert!(normalize(&[256.0]).is_err());
        assert!(normalize(&[-1.0]).is_err());
        assert!(denormalize(&[1.5]).is_err());
        assert!(normalize(&[f64::NAN]).is_err());
    }

    #[test]
    fn round_trip_every_class() {
        for k in 1..=16 {
            for c in 0..k {
                assert_eq!(decode(&encode_ground_truth(c, k).unwrap()), c);
            }
        }
    }

    #[test]
    fn distinct_classes_are_far_apart() {
        let a = encode_ground_truth(1, 4).unwrap();
        let b = encode_ground_truth(3, 4).unwrap();
        let dist = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert_eq!(dist, 255.0);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(values in proptest::collection::vec(0.0f64..=255.0, 1..16)) {
            let back = denormalize(&normalize(&values).unwrap()).unwrap();
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
