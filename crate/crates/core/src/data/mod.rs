//! Multi-agent scene samples, the synthetic generator, dataset files and
//! train/test splitting.

mod format;
mod synth;

pub use format::{load_features, save_features, FileFormat};
pub use synth::{generate_synthetic, majority_label, SyntheticConfig};

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed::substream;
use crate::tensor::Tensor;

/// One labeled scene: `N` person slots, a scene-level sequence and the
/// group label. Every sequence is `[T×d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub persons: Vec<Tensor>,
    pub scene: Tensor,
    /// `true` for a real agent, `false` for a dummy slot.
    pub presence: Vec<bool>,
    pub label: usize,
    /// Latent action of each real agent. Generation metadata only; models
    /// never read it.
    pub individual_labels: Vec<usize>,
}

impl SceneSample {
    pub fn real_agents(&self) -> usize {
        self.presence.iter().filter(|&&p| p).count()
    }
}

/// Fills the slots after the real agents with all-zero dummy sequences.
pub fn pad_dummy(sample: &SceneSample, slots: usize) -> Result<SceneSample> {
    let real = sample.persons.len();
    if real == 0 {
        return Err(Error::contract("sample has no real agents"));
    }
    if real > slots {
        return Err(Error::contract(format!(
            "{real} agents do not fit in {slots} slots"
        )));
    }
    let mut out = sample.clone();
    let dummy = Tensor::zeros(sample.scene.shape().to_vec());
    out.persons.resize(slots, dummy);
    out.presence = vec![true; real];
    out.presence.resize(slots, false);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub agents: usize,
    pub steps: usize,
    pub features: usize,
    pub classes: usize,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for s in &self.samples {
            h[s.label] += 1;
        }
        h
    }

    /// Same header, chosen samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.header()
        }
    }

    fn header(&self) -> Dataset {
        Dataset {
            agents: self.agents,
            steps: self.steps,
            features: self.features,
            classes: self.classes,
            samples: Vec::new(),
        }
    }

    /// Hash of every sample's label and feature bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (self.agents, self.steps, self.features, self.classes).hash(&mut h);
        for s in &self.samples {
            s.label.hash(&mut h);
            s.presence.hash(&mut h);
            for t in s.persons.iter().chain([&s.scene]) {
                for v in t.data() {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Checks every sample against the header.
    pub fn validate(&self) -> Result<()> {
        let seq = [self.steps, self.features];
        for (i, s) in self.samples.iter().enumerate() {
            let bad = |detail: String| Error::Format(format!("sample {i}: {detail}"));
            if s.persons.len() != self.agents || s.presence.len() != self.agents {
                return Err(bad(format!(
                    "{} person slots for N={}",
                    s.persons.len(),
                    self.agents
                )));
            }
            if s.label >= self.classes {
                return Err(bad(format!("label {} with k={}", s.label, self.classes)));
            }
            if s.real_agents() == 0 {
                return Err(bad("no real agents".into()));
            }
            if s.individual_labels.len() != s.real_agents() {
                return Err(bad("individual labels do not match presence mask".into()));
            }
            for t in s.persons.iter().chain([&s.scene]) {
                if t.shape() != seq {
                    return Err(bad(format!("sequence {:?}, header [{}, {}]", t.shape(), seq[0], seq[1])));
                }
            }
        }
        Ok(())
    }
}

/// Seeded stratified split. Every class with at least two samples lands in
/// both partitions; smaller classes go to train with a warning.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut by_class = vec![Vec::new(); dataset.classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = substream(seed, "split", 0);
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    // Per-class quotas, then nudge toward the overall target while keeping
    // each splittable class on both sides.
    let bounds: Vec<(usize, usize)> = by_class
        .iter()
        .map(|m| if m.len() >= 2 { (1, m.len() - 1) } else { (m.len(), m.len()) })
        .collect();
    let mut quota: Vec<usize> = by_class
        .iter()
        .zip(&bounds)
        .map(|(m, &(lo, hi))| ((m.len() as f64 * train_fraction).round() as usize).clamp(lo, hi))
        .collect();
    let target = (dataset.len() as f64 * train_fraction).round() as usize;
    loop {
        let total: usize = quota.iter().sum();
        let wanted = |c: usize| by_class[c].len() as f64 * train_fraction - quota[c] as f64;
        let pick = if total < target {
            (0..quota.len())
                .filter(|&c| quota[c] < bounds[c].1)
                .max_by(|&a, &b| wanted(a).total_cmp(&wanted(b)).then(b.cmp(&a)))
        } else if total > target {
            (0..quota.len())
                .filter(|&c| quota[c] > bounds[c].0)
                .min_by(|&a, &b| wanted(a).total_cmp(&wanted(b)).then(a.cmp(&b)))
        } else {
            None
        };
        match pick {
            Some(c) if total < target => quota[c] += 1,
            Some(c) => quota[c] -= 1,
            None => break,
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        if members.len() == 1 {
            log::warn!("class {c} has a single sample; it goes to the training split");
        }
        train.extend_from_slice(&members[..quota[c]]);
        test.extend_from_slice(&members[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(real: usize, label: usize) -> SceneSample {
        SceneSample {
            persons: (0..real).map(|i| Tensor::full([2, 3], i as f64 + 1.0)).collect(),
            scene: Tensor::full([2, 3], 0.5),
            presence: vec![true; real],
            label,
            individual_labels: vec![label; real],
        }
    }

    fn dataset(labels: &[usize], classes: usize) -> Dataset {
        Dataset {
            agents: 3,
            steps: 2,
            features: 3,
            classes,
            samples: labels
                .iter()
                .map(|&l| pad_dummy(&sample(2, l), 3).unwrap())
                .collect(),
        }
    }

    #[test]
    fn padding_fills_trailing_slots() {
        let s = pad_dummy(&sample(3, 0), 5).unwrap();
        assert_eq!(s.presence, vec![true, true, true, false, false]);
        assert!(s.persons[3].data().iter().all(|&v| v == 0.0));
        assert!(s.persons[4].data().iter().all(|&v| v == 0.0));
        assert_eq!(s.persons[2], Tensor::full([2, 3], 3.0));
    }

    #[test]
    fn full_sample_is_unchanged_by_padding() {
        let s = sample(4, 1);
        assert_eq!(pad_dummy(&s, 4).unwrap(), s);
    }

    #[test]
    fn padding_rejects_empty_and_overfull() {
        assert!(matches!(pad_dummy(&sample(0, 0), 3), Err(Error::Contract(_))));
        assert!(matches!(pad_dummy(&sample(4, 0), 3), Err(Error::Contract(_))));
    }

    #[test]
    fn split_sizes_and_stratification() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let ds = dataset(&labels, 4);
        let (train, test) = split(&ds, 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
        assert!(train.class_histogram().iter().all(|&c| c > 0));
        assert!(test.class_histogram().iter().all(|&c| c > 0));
        let (again, _) = split(&ds, 0.8, 3).unwrap();
        assert_eq!(train, again);
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let labels = [0, 0, 0, 1, 1, 2, 2, 2, 2, 2, 3];
        let mut ds = dataset(&labels, 4);
        for (i, s) in ds.samples.iter_mut().enumerate() {
            s.scene = Tensor::full([2, 3], i as f64);
        }
        let (train, test) = split(&ds, 0.5, 9).unwrap();
        let mut ids: Vec<i64> = train
            .samples
            .iter()
            .chain(&test.samples)
            .map(|s| s.scene.data()[0] as i64)
            .collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..labels.len() as i64).collect::<Vec<_>>());
        // Class 3 has one sample and stays in train.
        assert_eq!(test.class_histogram()[3], 0);
        assert!(test.class_histogram()[..3].iter().all(|&c| c > 0));
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = dataset(&[0, 1], 2);
        assert!(matches!(split(&ds, 0.0, 1), Err(Error::Contract(_))));
        assert!(matches!(split(&ds, 1.0, 1), Err(Error::Contract(_))));
    }
}
