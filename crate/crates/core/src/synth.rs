//! Synthetic references and noisy "systems" with known error structure.
//!
//! References come from a Zipf-weighted vocabulary. Each word has three
//! preferred successors, chosen with probability `markov_weight`.
//! Systems copy the reference through independent substitution, deletion
//! and insertion channels. A planted-minority position is one where a single
//! system keeps the reference word while all others emit the same confusable.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CombinationCorpus, Sentence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub num_sentences: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    /// Chance that the next word follows the previous word's successor list.
    pub markov_weight: f64,
    pub seed: u64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            num_sentences: 1000,
            vocab_size: 300,
            min_len: 8,
            max_len: 20,
            zipf_exponent: 1.0,
            markov_weight: 0.5,
            seed: 1,
        }
    }
}

/// Word `k` of the synthetic vocabulary.
pub fn synthetic_word(k: usize) -> String {
    format!("w{k}")
}

pub fn generate_references(spec: &ReferenceSpec) -> Result<Vec<Sentence>> {
    if spec.vocab_size < 2 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::Config(format!(
            "bad reference spec: vocab {}, lengths {}..={}",
            spec.vocab_size, spec.min_len, spec.max_len
        )));
    }
    check_rate("markov_weight", spec.markov_weight)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = (1..=spec.vocab_size).map(|k| (k as f64).powf(-spec.zipf_exponent)).collect();
    let zipf = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let successors: Vec<[usize; 3]> =
        (0..spec.vocab_size).map(|_| [zipf.sample(&mut rng), zipf.sample(&mut rng), zipf.sample(&mut rng)]).collect();
    (0..spec.num_sentences)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut words = Vec::with_capacity(len);
            let mut prev: Option<usize> = None;
            for _ in 0..len {
                let w = match prev {
                    Some(p) if rng.random_bool(spec.markov_weight) => successors[p][rng.random_range(0..3)],
                    _ => zipf.sample(&mut rng),
                };
                words.push(synthetic_word(w));
                prev = Some(w);
            }
            Sentence::new(words)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemNoise {
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// One entry per system; the length is the system count.
    pub systems: Vec<SystemNoise>,
    pub planted_minority: f64,
    pub confusables_per_word: usize,
    /// Explicit confusable table; sampled from the references when absent.
    #[serde(default)]
    pub confusables: Option<BTreeMap<String, Vec<String>>>,
    pub seed: u64,
}

impl NoiseSpec {
    /// The same noise for `num_systems` systems.
    pub fn uniform(num_systems: usize, noise: SystemNoise, planted_minority: f64, seed: u64) -> Self {
        NoiseSpec {
            systems: vec![noise; num_systems],
            planted_minority,
            confusables_per_word: 2,
            confusables: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.systems.len() < 2 {
            return Err(Error::Config(format!("need at least 2 systems, got {}", self.systems.len())));
        }
        for s in &self.systems {
            check_rate("substitution", s.substitution)?;
            check_rate("deletion", s.deletion)?;
            check_rate("insertion", s.insertion)?;
            if s.substitution + s.deletion > 1.0 {
                return Err(Error::Config("substitution + deletion exceeds 1".into()));
            }
        }
        check_rate("planted_minority", self.planted_minority)
    }
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if (0.0..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} rate {r} outside [0, 1]")))
    }
}

/// A planted position: only `correct_system` carries the reference word at
/// reference token `position`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedLabel {
    pub sentence_index: usize,
    pub position: usize,
    pub correct_system: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: CombinationCorpus,
    pub labels: Vec<PlantedLabel>,
    pub confusables: BTreeMap<String, Vec<String>>,
}

/// For every reference word, `per_word` other words drawn by corpus
/// frequency without replacement.
pub fn sample_confusables(
    refs: &[Sentence],
    per_word: usize,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, Vec<String>>> {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in refs {
        for w in s.tokens() {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    if freq.len() < 2 {
        return Err(Error::Domain("confusables need at least 2 reference word types".into()));
    }
    let words: Vec<&str> = freq.keys().copied().collect();
    let counts: Vec<usize> = words.iter().map(|w| freq[w]).collect();
    let mut table = BTreeMap::new();
    for (i, w) in words.iter().enumerate() {
        let mut weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        weights[i] = 0.0;
        let mut picked = Vec::new();
        for _ in 0..per_word.min(words.len() - 1) {
            let dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
            let k = dist.sample(rng);
            weights[k] = 0.0;
            picked.push(words[k].to_string());
        }
        table.insert(w.to_string(), picked);
    }
    Ok(table)
}

/// Corrupts `refs` once per system. The result carries the references and
/// the planted-minority labels.
pub fn generate_systems(refs: &[Sentence], spec: &NoiseSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    if refs.is_empty() {
        return Err(Error::Domain("no reference sentences".into()));
    }
    let n = spec.systems.len();
    let mut plant_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let confusables = match &spec.confusables {
        Some(t) => t.clone(),
        None => sample_confusables(refs, spec.confusables_per_word, &mut plant_rng)?,
    };
    let mut system_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect();
    // Insertions draw from reference frequencies.
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for s in refs {
        for w in s.tokens() {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    let vocab: Vec<&str> = freq.keys().copied().collect();
    let insert_dist = WeightedIndex::new(vocab.iter().map(|w| freq[w])).map_err(|e| Error::Domain(e.to_string()))?;

    let mut outputs: Vec<Vec<Sentence>> = vec![Vec::with_capacity(refs.len()); n];
    let mut labels = Vec::new();
    for (s, reference) in refs.iter().enumerate() {
        let mut words: Vec<Vec<String>> = vec![Vec::new(); n];
        for (p, w) in reference.tokens().iter().enumerate() {
            let conf = confusables.get(w).map(Vec::as_slice).unwrap_or(&[]);
            if !conf.is_empty() && plant_rng.random_bool(spec.planted_minority) {
                let correct = plant_rng.random_range(0..n);
                for (i, out) in words.iter_mut().enumerate() {
                    out.push(if i == correct { w.clone() } else { conf[0].clone() });
                }
                labels.push(PlantedLabel { sentence_index: s, position: p, correct_system: correct });
                continue;
            }
            for (i, out) in words.iter_mut().enumerate() {
                let noise = &spec.systems[i];
                let rng = &mut system_rngs[i];
                let r: f64 = rng.random();
                if r < noise.substitution && !conf.is_empty() {
                    out.push(conf[rng.random_range(0..conf.len())].clone());
                } else if r >= noise.substitution && r < noise.substitution + noise.deletion {
                    // deleted
                } else {
                    out.push(w.clone());
                }
                if noise.insertion > 0.0 && rng.random_bool(noise.insertion) {
                    out.push(vocab[insert_dist.sample(rng)].to_string());
                }
            }
        }
        for (i, w) in words.into_iter().enumerate() {
            outputs[i].push(Sentence::new(w)?);
        }
    }
    Ok(SyntheticCorpus {
        corpus: CombinationCorpus::from_sentences(outputs, Some(refs.to_vec()))?,
        labels,
        confusables,
    })
}

pub fn write_labels(labels: &[PlantedLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for l in labels {
        let line = serde_json::to_string(l).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<PlantedLabel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(n: usize, seed: u64) -> Vec<Sentence> {
        generate_references(&ReferenceSpec { num_sentences: n, vocab_size: 60, seed, ..ReferenceSpec::default() })
            .unwrap()
    }

    #[test]
    fn zero_noise_copies_references() {
        let r = refs(30, 1);
        let out = generate_systems(&r, &NoiseSpec::uniform(3, SystemNoise::default(), 0.0, 4)).unwrap();
        for sys in out.corpus.systems() {
            assert_eq!(sys.sentences, r);
        }
        assert!(out.labels.is_empty());
    }

    #[test]
    fn full_substitution_with_disjoint_confusables() {
        let r = refs(20, 2);
        let mut table = BTreeMap::new();
        for s in &r {
            for w in s.tokens() {
                table.insert(w.clone(), vec![format!("x{w}"), format!("y{w}")]);
            }
        }
        let mut spec = NoiseSpec::uniform(3, SystemNoise { substitution: 1.0, ..SystemNoise::default() }, 0.0, 5);
        spec.confusables = Some(table);
        let out = generate_systems(&r, &spec).unwrap();
        for sys in out.corpus.systems() {
            for (h, rf) in sys.sentences.iter().zip(&r) {
                assert_eq!(h.len(), rf.len());
                assert!(h.tokens().iter().zip(rf.tokens()).all(|(a, b)| a != b));
            }
        }
    }

    #[test]
    fn planted_count_near_expectation_and_labels_hold() {
        let r = refs(500, 3);
        let noise = SystemNoise { substitution: 0.15, deletion: 0.05, insertion: 0.0 };
        let out = generate_systems(&r, &NoiseSpec::uniform(4, noise, 0.05, 7)).unwrap();
        let positions: usize = r.iter().map(Sentence::len).sum();
        let expect = 0.05 * positions as f64;
        let got = out.labels.len() as f64;
        assert!((got - expect).abs() <= 0.1 * expect, "{got} vs {expect}");
        let again = generate_systems(&r, &NoiseSpec::uniform(4, noise, 0.05, 7)).unwrap();
        assert_eq!(out, again);
        assert_eq!(out.labels.len(), again.labels.len());
    }

    #[test]
    fn planted_positions_have_a_single_correct_system() {
        // No other noise, so outputs stay position-aligned with the reference.
        let r = refs(200, 4);
        let out = generate_systems(&r, &NoiseSpec::uniform(4, SystemNoise::default(), 0.2, 9)).unwrap();
        assert!(!out.labels.is_empty());
        for l in &out.labels {
            let word = &r[l.sentence_index].tokens()[l.position];
            let carriers: Vec<usize> = out
                .corpus
                .systems()
                .iter()
                .filter(|s| &s.sentences[l.sentence_index].tokens()[l.position] == word)
                .map(|s| s.system_id)
                .collect();
            assert_eq!(carriers, vec![l.correct_system]);
        }
    }

    #[test]
    fn errors_and_label_file() {
        assert!(matches!(
            generate_systems(&[], &NoiseSpec::uniform(2, SystemNoise::default(), 0.0, 1)),
            Err(Error::Domain(_))
        ));
        let bad = NoiseSpec::uniform(2, SystemNoise { substitution: 1.5, ..SystemNoise::default() }, 0.0, 1);
        assert!(matches!(generate_systems(&refs(2, 1), &bad), Err(Error::Config(_))));
        let labels = vec![PlantedLabel { sentence_index: 3, position: 1, correct_system: 2 }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        write_labels(&labels, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "{\"sentence_index\":3,\"position\":1,\"correct_system\":2}\n");
        assert_eq!(read_labels(&p).unwrap(), labels);
    }
}
