use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{pad_dummy, Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::seed::substream;
use crate::tensor::Tensor;

/// Parameters of the synthetic multi-agent benchmark.
///
/// Each scene draws a dominant action (by `class_weights`, uniform when
/// absent); every agent performs it with probability `coherence` and a
/// uniformly random action otherwise. An agent's sequence is the fixed
/// trajectory of its action scaled by `class_separation`, plus Gaussian
/// noise. The scene sequence is the mean of the agents plus independent
/// noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub group_classes: usize,
    /// Vocabulary of latent agent actions. The majority rule maps them onto
    /// group labels one to one, so this must equal `group_classes`.
    pub individual_classes: usize,
    /// Person slots per scene.
    pub agents: usize,
    pub steps: usize,
    pub features: usize,
    pub agents_min: usize,
    pub agents_max: usize,
    pub noise_std: f64,
    pub class_separation: f64,
    /// Chance an agent switches action at a random step in the second half.
    pub transition_prob: f64,
    pub coherence: f64,
    pub class_weights: Option<Vec<f64>>,
    /// Label each scene by its first agent's action instead of the majority.
    pub key_agent: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            group_classes: 4,
            individual_classes: 4,
            agents: 5,
            steps: 10,
            features: 8,
            agents_min: 2,
            agents_max: 5,
            noise_std: 0.5,
            class_separation: 1.0,
            transition_prob: 0.0,
            coherence: 0.7,
            class_weights: None,
            key_agent: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.agents_max > self.agents {
            return fail(format!(
                "agents_max ({}) must not exceed agents N ({})",
                self.agents_max, self.agents
            ));
        }
        if self.agents_min == 0 || self.agents_min > self.agents_max {
            return fail(format!(
                "need 1 <= agents_min ({}) <= agents_max ({})",
                self.agents_min, self.agents_max
            ));
        }
        if self.group_classes == 0 || self.steps == 0 || self.features == 0 {
            return fail("group_classes, steps and features must be positive".into());
        }
        if self.individual_classes != self.group_classes {
            return fail(format!(
                "individual_classes ({}) must equal group_classes ({}) under the majority rule",
                self.individual_classes, self.group_classes
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std ({}) must be finite and >= 0", self.noise_std));
        }
        if !self.class_separation.is_finite() {
            return fail("class_separation must be finite".into());
        }
        for (name, p) in [("transition_prob", self.transition_prob), ("coherence", self.coherence)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} ({p}) must lie in [0, 1]"));
            }
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.group_classes {
                return fail(format!(
                    "class_weights has {} entries for {} classes",
                    w.len(),
                    self.group_classes
                ));
            }
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return fail("class_weights must be non-negative with a positive sum".into());
            }
        }
        Ok(())
    }
}

/// Most frequent label; ties go to the lowest id.
pub fn majority_label(labels: &[usize]) -> Option<usize> {
    let max = *labels.iter().max()?;
    let mut counts = vec![0usize; max + 1];
    for &l in labels {
        counts[l] += 1;
    }
    let best = counts.iter().max().copied()?;
    counts.iter().position(|&c| c == best)
}

fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

/// One fixed `[T×d]` trajectory per action: a random start point drifting
/// linearly toward a random offset over the sequence.
fn anchors(cfg: &SyntheticConfig) -> Vec<Vec<f64>> {
    let mut rng = substream(cfg.seed, "anchors", 0);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let span = (cfg.steps.max(2) - 1) as f64;
    (0..cfg.individual_classes)
        .map(|_| {
            let base: Vec<f64> = (0..cfg.features).map(|_| std.sample(&mut rng)).collect();
            let drift: Vec<f64> = (0..cfg.features).map(|_| std.sample(&mut rng)).collect();
            (0..cfg.steps)
                .flat_map(|t| {
                    let frac = t as f64 / span;
                    base.iter()
                        .zip(&drift)
                        .map(move |(b, d)| cfg.class_separation * (b + frac * d))
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect()
}

/// Builds a dataset from `cfg`. Sample `i` depends only on the seed and
/// `i`, never on other samples.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let anchors = anchors(cfg);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let weights = cfg
        .class_weights
        .clone()
        .unwrap_or_else(|| vec![1.0; cfg.group_classes]);
    let dominant_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let (t_len, d) = (cfg.steps, cfg.features);

    let mut samples = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let mut rng = substream(cfg.seed, "data", i as u64);
        let real = rng.random_range(cfg.agents_min..=cfg.agents_max);
        let dominant = dominant_dist.sample(&mut rng);
        let actions: Vec<usize> = (0..real)
            .map(|_| {
                if rng.random_bool(cfg.coherence) {
                    dominant
                } else {
                    rng.random_range(0..cfg.individual_classes)
                }
            })
            .collect();

        let mut persons = Vec::with_capacity(real);
        for &a in &actions {
            let switch = if cfg.individual_classes > 1 && rng.random_bool(cfg.transition_prob) {
                let at = rng.random_range(t_len.div_ceil(2)..t_len.max(t_len.div_ceil(2) + 1));
                let mut next = rng.random_range(0..cfg.individual_classes - 1);
                if next >= a {
                    next += 1;
                }
                Some((at, next))
            } else {
                None
            };
            let data = (0..t_len * d)
                .map(|j| {
                    let t = j / d;
                    let source = match switch {
                        Some((at, next)) if t >= at => next,
                        _ => a,
                    };
                    to_f32_grid(anchors[source][j] + noise.sample(&mut rng))
                })
                .collect();
            persons.push(Tensor::matrix(t_len, d, data)?);
        }

        let scene_data = (0..t_len * d)
            .map(|j| {
                let mean = persons.iter().map(|p| p.data()[j]).sum::<f64>() / real as f64;
                to_f32_grid(mean + noise.sample(&mut rng))
            })
            .collect();
        let label = if cfg.key_agent {
            actions[0]
        } else {
            majority_label(&actions).expect("at least one agent")
        };
        let sample = SceneSample {
            persons,
            scene: Tensor::matrix(t_len, d, scene_data)?,
            presence: vec![true; real],
            label,
            individual_labels: actions,
        };
        samples.push(pad_dummy(&sample, cfg.agents)?);
    }
    Ok(Dataset {
        agents: cfg.agents,
        steps: cfg.steps,
        features: cfg.features,
        classes: cfg.group_classes,
        samples,
    })
}
