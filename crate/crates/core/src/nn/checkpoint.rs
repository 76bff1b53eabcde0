//! Plain-text checkpoint format.
//!
//! ```text
//! mlsgan-checkpoint 1
//! meta <key> <value to end of line>
//! ...
//! array <name> <rank> <dim_1> ... <dim_rank>
//! <numel values, single-space separated, Rust `{:e}` formatting>
//! ...
//! end
//! ```
//!
//! Meta lines come first, in insertion order, followed by arrays in
//! insertion order. `{:e}` prints the shortest digits that parse back to the
//! same `f64`, so a write/read cycle is bit-exact and equal contents always
//! serialize to identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "mlsgan-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses a meta value, reporting a format error when absent or invalid.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks meta key {key}")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("checkpoint meta {key}={raw} is invalid")))
    }

    pub fn push_array(&mut self, name: impl Into<String>, value: Tensor) {
        self.arrays.push((name.into(), value));
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Adds every parameter of `store`, prefixing names with `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.push_array(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Overwrites every parameter of `store` from arrays named
    /// `prefix + name`; every parameter must be present with its shape.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let mut values = Vec::with_capacity(store.len());
        for (name, t) in store.iter() {
            let key = format!("{prefix}{name}");
            let saved = self
                .array(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {key}")))?;
            if saved.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "parameter {key}: checkpoint shape {:?}, model shape {:?}",
                    saved.shape(),
                    t.shape()
                )));
            }
            values.push(saved.clone());
        }
        store.set_tensors(values)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.arrays {
            let _ = write!(out, "array {name} {}", t.rank());
            for d in t.shape() {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            for (i, v) in t.data().iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:e}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            record: format!("checkpoint line {}", line + 1),
            detail,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((i, other)) => return Err(err(i, format!("bad header {other:?}"))),
            None => return Err(err(0, "empty file".into())),
        }
        let mut ckpt = Checkpoint::new();
        let mut ended = false;
        while let Some((i, line)) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| err(i, "meta line without value".into()))?;
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("array ") {
                let mut parts = rest.split(' ');
                let name = parts
                    .next()
                    .ok_or_else(|| err(i, "array without name".into()))?;
                let nums = parts
                    .map(|p| p.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| err(i, format!("bad shape: {e}")))?;
                let (&rank, dims) = nums
                    .split_first()
                    .ok_or_else(|| err(i, "array without rank".into()))?;
                if dims.len() != rank {
                    return Err(err(i, format!("rank {rank} with {} dims", dims.len())));
                }
                let (j, data_line) = lines
                    .next()
                    .ok_or_else(|| err(i + 1, format!("missing values for {name}")))?;
                let data = if data_line.is_empty() {
                    Vec::new()
                } else {
                    data_line
                        .split(' ')
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|e| err(j, format!("bad value: {e}")))?
                };
                let t = Tensor::new(dims.to_vec(), data)
                    .map_err(|e| err(j, format!("{name}: {e}")))?;
                ckpt.arrays.push((name.to_string(), t));
            } else {
                return Err(err(i, format!("unexpected line {line:?}")));
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "truncated: missing end marker".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io_at(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.set_meta("variant", "mls_gan");
        c.set_meta("epoch", 3);
        c.push_array("g.w", Tensor::matrix(2, 2, vec![0.1, -1e-300, 3.5e10, -0.0]).unwrap());
        c.push_array("s", Tensor::scalar(f64::MIN_POSITIVE));
        c.push_array("empty", Tensor::zeros([0]));
        c
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back.meta, c.meta);
        for ((n1, t1), (n2, t2)) in c.arrays.iter().zip(&back.arrays) {
            assert_eq!(n1, n2);
            assert!(t1.bit_eq(t2), "{n1}");
        }
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let text = sample().to_text();
        let cut = &text[..text.len() - 4];
        assert!(matches!(Checkpoint::parse(cut), Err(Error::Parse { .. })));
    }

    #[test]
    fn load_store_checks_shapes() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros([3]));
        let mut c = Checkpoint::new();
        c.push_array("g.w", Tensor::zeros([2]));
        assert!(c.load_store("g.", &mut store).is_err());
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 0..40)) {
            let mut c = Checkpoint::new();
            c.push_array("x", Tensor::vector(values));
            let back = Checkpoint::parse(&c.to_text()).unwrap();
            prop_assert!(back.arrays[0].1.bit_eq(&c.arrays[0].1));
        }
    }
}
