//! Feature dataset files.
//!
//! Both variants carry the same content and store every feature as a
//! 32-bit float, so a save/load cycle of a dataset whose values are
//! `f32`-representable (all generated ones are) is bit-exact.
//!
//! Binary, all integers `u32` and floats `f32`, little-endian:
//!
//! ```text
//! "MLSGDAT1"
//! agents N, steps T, features d, classes k, samples S
//! S records of:
//!   label
//!   N presence bytes (1 = real agent, 0 = dummy)
//!   r, then r individual labels
//!   N·T·d person features (slot, then step, then feature)
//!   T·d scene features
//! ```
//!
//! Text, one token stream per line, floats in shortest round-trip form:
//!
//! ```text
//! mlsgan-features 1
//! agents N steps T features d classes k samples S
//! sample <i> label <c> presence <N × 0|1> individual <r labels>
//! person <n> <T·d values>        (N lines)
//! scene <T·d values>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const BINARY_MAGIC: &[u8; 8] = b"MLSGDAT1";
const TEXT_MAGIC: &str = "mlsgan-features 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileFormat {
    Binary,
    Text,
}

pub fn save_features(path: &Path, dataset: &Dataset, format: FileFormat) -> Result<()> {
    dataset.validate()?;
    let bytes = match format {
        FileFormat::Binary => to_binary(dataset),
        FileFormat::Text => to_text(dataset).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

/// Reads either variant, chosen by the leading magic bytes.
pub fn load_features(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    let ds = if bytes.starts_with(BINARY_MAGIC) {
        from_binary(&bytes)?
    } else if bytes.starts_with(TEXT_MAGIC.as_bytes()) {
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
            record: "file".into(),
            detail: e.to_string(),
        })?;
        from_text(text)?
    } else {
        return Err(Error::Parse {
            record: "header".into(),
            detail: "unrecognized magic".into(),
        });
    };
    ds.validate()?;
    Ok(ds)
}

fn to_binary(ds: &Dataset) -> Vec<u8> {
    let mut out = BINARY_MAGIC.to_vec();
    let u32s = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for v in [ds.agents, ds.steps, ds.features, ds.classes, ds.samples.len()] {
        u32s(&mut out, v);
    }
    for s in &ds.samples {
        u32s(&mut out, s.label);
        out.extend(s.presence.iter().map(|&p| p as u8));
        u32s(&mut out, s.individual_labels.len());
        for &l in &s.individual_labels {
            u32s(&mut out, l);
        }
        for t in s.persons.iter().chain([&s.scene]) {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: String,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                record: self.record.clone(),
                detail: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

fn from_binary(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader {
        bytes,
        pos: BINARY_MAGIC.len(),
        record: "header".into(),
    };
    let (agents, steps, features, classes, count) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        r.record = format!("sample {i}");
        let label = r.u32()?;
        if label >= classes {
            return Err(Error::Format(format!("sample {i}: label {label} with k={classes}")));
        }
        let presence = r.take(agents)?.iter().map(|&b| b != 0).collect();
        let n_ind = r.u32()?;
        if n_ind > agents {
            return Err(Error::Format(format!(
                "sample {i}: {n_ind} individual labels for N={agents}"
            )));
        }
        let individual_labels = (0..n_ind).map(|_| r.u32()).collect::<Result<_>>()?;
        let persons = (0..agents)
            .map(|_| Tensor::matrix(steps, features, r.floats(steps * features)?))
            .collect::<Result<_>>()?;
        let scene = Tensor::matrix(steps, features, r.floats(steps * features)?)?;
        samples.push(SceneSample {
            persons,
            scene,
            presence,
            label,
            individual_labels,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after {count} samples",
            bytes.len() - r.pos
        )));
    }
    Ok(Dataset {
        agents,
        steps,
        features,
        classes,
        samples,
    })
}

fn join_floats(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(' ');
        out.push_str(&(*v as f32).to_string());
    }
}

fn to_text(ds: &Dataset) -> String {
    let mut out = format!(
        "{TEXT_MAGIC}\nagents {} steps {} features {} classes {} samples {}\n",
        ds.agents,
        ds.steps,
        ds.features,
        ds.classes,
        ds.samples.len()
    );
    for (i, s) in ds.samples.iter().enumerate() {
        out.push_str(&format!("sample {i} label {} presence", s.label));
        for &p in &s.presence {
            out.push_str(if p { " 1" } else { " 0" });
        }
        out.push_str(" individual");
        for l in &s.individual_labels {
            out.push_str(&format!(" {l}"));
        }
        out.push('\n');
        for (n, p) in s.persons.iter().enumerate() {
            out.push_str(&format!("person {n}"));
            join_floats(&mut out, p.data());
            out.push('\n');
        }
        out.push_str("scene");
        join_floats(&mut out, s.scene.data());
        out.push('\n');
    }
    out
}

fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().skip(1);
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| Error::Parse {
            record: format!("{what} (end of file)"),
            detail: "truncated".into(),
        })
    };
    let perr = |line: usize, detail: String| Error::Parse {
        record: format!("line {}", line + 1),
        detail,
    };
    let num = |line: usize, tok: Option<&str>| -> Result<usize> {
        tok.ok_or_else(|| perr(line, "missing number".into()))?
            .parse()
            .map_err(|e| perr(line, format!("{e}")))
    };
    let expect = |line: usize, tok: Option<&str>, key: &str| -> Result<()> {
        match tok {
            Some(t) if t == key => Ok(()),
            other => Err(perr(line, format!("expected {key:?}, found {other:?}"))),
        }
    };

    let (hl, header) = next("header")?;
    let mut toks = header.split_whitespace();
    let mut field = |key: &str| -> Result<usize> {
        expect(hl, toks.next(), key)?;
        num(hl, toks.next())
    };
    let (agents, steps, features, classes, count) = (
        field("agents")?,
        field("steps")?,
        field("features")?,
        field("classes")?,
        field("samples")?,
    );
    let seq_len = steps * features;
    let floats = |line: usize, toks: std::str::SplitWhitespace<'_>| -> Result<Tensor> {
        let values = toks
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| perr(line, format!("bad value: {e}")))?;
        if values.len() != seq_len {
            return Err(Error::Format(format!(
                "line {}: {} values, header T·d = {seq_len}",
                line + 1,
                values.len()
            )));
        }
        Tensor::matrix(steps, features, values)
    };

    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let (sl, line) = next(&format!("sample {i}"))?;
        let mut toks = line.split_whitespace();
        expect(sl, toks.next(), "sample")?;
        if num(sl, toks.next())? != i {
            return Err(perr(sl, format!("expected sample {i}")));
        }
        expect(sl, toks.next(), "label")?;
        let label = num(sl, toks.next())?;
        if label >= classes {
            return Err(Error::Format(format!(
                "line {}: label {label} with k={classes}",
                sl + 1
            )));
        }
        expect(sl, toks.next(), "presence")?;
        let presence = (0..agents)
            .map(|_| match toks.next() {
                Some("1") => Ok(true),
                Some("0") => Ok(false),
                other => Err(perr(sl, format!("bad presence flag {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        expect(sl, toks.next(), "individual")?;
        let individual_labels = toks
            .map(|t| t.parse().map_err(|e| perr(sl, format!("{e}"))))
            .collect::<Result<Vec<usize>>>()?;
        let mut persons = Vec::with_capacity(agents);
        for n in 0..agents {
            let (pl, line) = next(&format!("sample {i} person {n}"))?;
            let mut toks = line.split_whitespace();
            expect(pl, toks.next(), "person")?;
            if num(pl, toks.next())? != n {
                return Err(perr(pl, format!("expected person {n}")));
            }
            persons.push(floats(pl, toks)?);
        }
        let (cl, line) = next(&format!("sample {i} scene"))?;
        let mut toks = line.split_whitespace();
        expect(cl, toks.next(), "scene")?;
        let scene = floats(cl, toks)?;
        samples.push(SceneSample {
            persons,
            scene,
            presence,
            label,
            individual_labels,
        });
    }
    if let Some((l, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(perr(l, format!("unexpected trailing line {extra:?}")));
    }
    Ok(Dataset {
        agents,
        steps,
        features,
        classes,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn small() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            samples: 12,
            agents: 4,
            agents_max: 3,
            steps: 3,
            features: 2,
            transition_prob: 0.3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn both_formats_round_trip_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        for fmt in [FileFormat::Binary, FileFormat::Text] {
            let path = dir.path().join(format!("{fmt:?}"));
            save_features(&path, &ds, fmt).unwrap();
            let back = load_features(&path).unwrap();
            assert_eq!(back.fingerprint(), ds.fingerprint(), "{fmt:?}");
            assert_eq!(back, ds);
        }
    }

    #[test]
    fn truncated_files_fail_to_parse() {
        let ds = small();
        let bin = to_binary(&ds);
        assert!(matches!(from_binary(&bin[..bin.len() - 3]), Err(Error::Parse { .. })));
        let text = to_text(&ds);
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        let err = from_text(&cut).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn out_of_range_label_is_a_format_error() {
        let ds = small();
        let text = to_text(&ds).replacen("classes 4", "classes 8", 1);
        let bad = text.replacen(&format!("sample 0 label {}", ds.samples[0].label), "sample 0 label 9", 1);
        assert!(matches!(from_text(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn sequence_length_mismatch_is_a_format_error() {
        let text = to_text(&small()).replacen("steps 3", "steps 4", 1);
        assert!(matches!(from_text(&text), Err(Error::Format(_))));
    }

    #[test]
    fn unknown_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        fs::write(&path, b"hello").unwrap();
        assert!(matches!(load_features(&path), Err(Error::Parse { .. })));
    }
}
