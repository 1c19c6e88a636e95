//! Toy binary text corpora with per-document ambiguity and injected label noise.
//!
//! Each document has a clarity score in `[0, 1]`. Tokens come from the
//! document's own class vocabulary with probability `0.1 + 0.5 * clarity`,
//! from the other class's vocabulary with probability 0.1, and from a shared
//! neutral vocabulary otherwise, so clarity 0 documents carry no signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SynthError;
use crate::types::{Dataset, Instance, LabelSpace, SplitTag};

/// Which documents receive flipped labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Every document is equally likely to be flipped.
    Uniform,
    /// Flip probability grows with ambiguity: documents are drawn without
    /// replacement with weight `(1 - clarity)^power`, the way annotators
    /// mostly disagree on borderline texts.
    Ambiguity { power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCorpusSpec {
    pub n: usize,
    /// Probability of class 1 ("hate").
    pub positive_rate: f64,
    /// Fraction of labels flipped; the count is `round(noise_rate * n)`.
    pub noise_rate: f64,
    pub noise_model: NoiseModel,
    /// Restricts flips to documents of this true class; `None` flips either way.
    pub flip_from: Option<usize>,
    pub class_vocab: usize,
    pub neutral_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for TextCorpusSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            positive_rate: 0.5,
            noise_rate: 0.0,
            noise_model: NoiseModel::Uniform,
            flip_from: None,
            class_vocab: 40,
            neutral_vocab: 300,
            min_len: 6,
            max_len: 14,
            id_prefix: "doc".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextCorpus {
    /// Observed (possibly flipped) labels.
    pub dataset: Dataset,
    /// Labels before noise was injected.
    pub true_labels: Vec<usize>,
    pub flipped: Vec<bool>,
    pub clarity: Vec<f64>,
}

impl TextCorpus {
    /// The same documents carrying their true labels.
    pub fn clean_dataset(&self) -> Dataset {
        let instances = self
            .dataset
            .instances()
            .iter()
            .zip(&self.true_labels)
            .map(|(inst, &y)| Instance {
                gold_label: Some(y),
                ..inst.clone()
            })
            .collect();
        self.dataset.with_instances(instances).expect("same ids and labels")
    }
}

fn zipf_index<R: Rng>(size: usize, rng: &mut R) -> usize {
    // Discrete 1/(k+1) weights via inverse transform on the harmonic sum.
    let h: f64 = (1..=size).map(|k| 1.0 / k as f64).sum();
    let mut target = rng.random::<f64>() * h;
    for k in 1..=size {
        target -= 1.0 / k as f64;
        if target <= 0.0 {
            return k - 1;
        }
    }
    size - 1
}

pub fn generate_corpus(spec: &TextCorpusSpec, split: SplitTag) -> Result<TextCorpus, SynthError> {
    if spec.n == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(SynthError::InvalidSpec("need n > 0 and 0 < min_len <= max_len".into()));
    }
    if !(0.0..1.0).contains(&spec.noise_rate) || !(0.0..=1.0).contains(&spec.positive_rate) {
        return Err(SynthError::InvalidSpec("rates must lie in [0, 1)".into()));
    }
    if spec.class_vocab == 0 || spec.neutral_vocab == 0 {
        return Err(SynthError::InvalidSpec("vocabularies must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prefixes = ["calm", "slur"];
    let mut texts = Vec::with_capacity(spec.n);
    let mut true_labels = Vec::with_capacity(spec.n);
    let mut clarity = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let y = usize::from(rng.random::<f64>() < spec.positive_rate);
        let c: f64 = rng.random();
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let own = 0.1 + 0.5 * c;
        let words: Vec<String> = (0..len)
            .map(|_| {
                let roll: f64 = rng.random();
                if roll < own {
                    format!("{}{}", prefixes[y], zipf_index(spec.class_vocab, &mut rng))
                } else if roll < own + 0.1 {
                    format!("{}{}", prefixes[1 - y], zipf_index(spec.class_vocab, &mut rng))
                } else {
                    format!("w{}", zipf_index(spec.neutral_vocab, &mut rng))
                }
            })
            .collect();
        texts.push(words.join(" "));
        true_labels.push(y);
        clarity.push(c);
    }

    let n_flip = (spec.noise_rate * spec.n as f64).round() as usize;
    let candidates: Vec<usize> = (0..spec.n)
        .filter(|&i| spec.flip_from.is_none_or(|c| true_labels[i] == c))
        .collect();
    if n_flip > candidates.len() {
        return Err(SynthError::InvalidSpec(format!(
            "{n_flip} flips requested but only {} documents are eligible",
            candidates.len()
        )));
    }
    let mut flipped = vec![false; spec.n];
    match spec.noise_model {
        NoiseModel::Uniform => {
            let mut order = candidates;
            order.shuffle(&mut rng);
            for &i in &order[..n_flip] {
                flipped[i] = true;
            }
        }
        NoiseModel::Ambiguity { power } => {
            // Weighted sampling without replacement via exponential keys.
            let mut keys: Vec<(f64, usize)> = candidates
                .into_iter()
                .map(|i| {
                    let w = (1.0 - clarity[i]).max(1e-12).powf(power);
                    let e: f64 = -(1.0 - rng.random::<f64>()).ln();
                    (e / w, i)
                })
                .collect();
            keys.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(_, i) in &keys[..n_flip] {
                flipped[i] = true;
            }
        }
    }

    let width = (spec.n.max(2) - 1).to_string().len();
    let instances = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let label = if flipped[i] { 1 - true_labels[i] } else { true_labels[i] };
            Instance::new(format!("{}-{:0width$}", spec.id_prefix, i, width = width), text, Some(label))
        })
        .collect();
    let dataset = Dataset::new(LabelSpace::binary(), instances, split).expect("generated ids are unique");
    Ok(TextCorpus {
        dataset,
        true_labels,
        flipped,
        clarity,
    })
}
