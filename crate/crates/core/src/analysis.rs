//! Output analyses: how many systems support the words a combination keeps,
//! and how many planted single-system words survive.
//!
//! Support is counted per sentence at the word-type level: a type has
//! support `c` when exactly `c` systems use it anywhere in that sentence.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::corpus::CombinationCorpus;
use crate::metrics::{edit_alignment, EditOp};
use crate::synth::PlantedLabel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DistributionRow {
    pub support: usize,
    /// (sentence, type) pairs with this support that occur in the output.
    pub in_output: usize,
    pub total: usize,
}

impl DistributionRow {
    pub fn percentage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.in_output as f64 / self.total as f64
        }
    }
}

impl fmt::Display for DistributionRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}/{} ({:.1}%)", self.support, self.in_output, self.total, self.percentage())
    }
}

/// One row per support count `1..=I`.
pub fn word_occurrence_distribution<H: AsRef<[S]>, S: AsRef<str>>(
    corpus: &CombinationCorpus,
    combined: &[H],
) -> Result<Vec<DistributionRow>> {
    if combined.len() != corpus.len() {
        return Err(Error::CorpusShape(format!(
            "{} combined sentences for {} input sentences",
            combined.len(),
            corpus.len()
        )));
    }
    let n = corpus.num_systems();
    let mut rows: Vec<DistributionRow> =
        (1..=n).map(|c| DistributionRow { support: c, in_output: 0, total: 0 }).collect();
    for (s, out) in combined.iter().enumerate() {
        let mut support: BTreeMap<&str, usize> = BTreeMap::new();
        for sys in corpus.systems() {
            let types: BTreeSet<&str> = sys.sentences[s].tokens().iter().map(String::as_str).collect();
            for t in types {
                *support.entry(t).or_insert(0) += 1;
            }
        }
        let output: BTreeSet<&str> = out.as_ref().iter().map(AsRef::as_ref).collect();
        for (word, c) in support {
            let row = &mut rows[c - 1];
            row.total += 1;
            row.in_output += usize::from(output.contains(word));
        }
    }
    Ok(rows)
}

pub fn format_distribution(rows: &[DistributionRow]) -> String {
    let mut s = String::from("support\tin_output/total (percent)\n");
    for r in rows {
        s.push_str(&format!("{r}\n"));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recovery {
    pub recovered: usize,
    pub total: usize,
}

/// Counts labeled reference positions that the output reproduces, using the
/// Levenshtein alignment of each output sentence to its reference.
pub fn planted_recovery<H: AsRef<[S]>, R: AsRef<[T]>, S: AsRef<str>, T: AsRef<str>>(
    outputs: &[H],
    refs: &[R],
    labels: &[PlantedLabel],
) -> Result<Recovery> {
    if outputs.len() != refs.len() {
        return Err(Error::CorpusShape(format!("{} outputs for {} references", outputs.len(), refs.len())));
    }
    let mut by_sentence: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for l in labels {
        if l.sentence_index >= refs.len() || l.position >= refs[l.sentence_index].as_ref().len() {
            return Err(Error::Consistency(format!(
                "label at sentence {} position {} lies outside the references",
                l.sentence_index, l.position
            )));
        }
        by_sentence.entry(l.sentence_index).or_default().push(l.position);
    }
    let mut rec = Recovery::default();
    for (s, positions) in by_sentence {
        let (_, ops) = edit_alignment(outputs[s].as_ref(), refs[s].as_ref());
        // Status of every reference position.
        let mut matched = Vec::with_capacity(refs[s].as_ref().len());
        for op in ops {
            match op {
                EditOp::Match => matched.push(true),
                EditOp::Substitution | EditOp::Deletion => matched.push(false),
                EditOp::Insertion => {}
            }
        }
        for p in positions {
            rec.total += 1;
            rec.recovered += usize::from(matched[p]);
        }
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn sent(s: &str) -> Sentence {
        Sentence::parse(s).unwrap()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn colour_sentence_counts() {
        let corpus = CombinationCorpus::from_sentences(
            vec![
                vec![sent("the black cab")],
                vec![sent("an red train")],
                vec![sent("a orange car")],
                vec![sent("a green car")],
            ],
            None,
        )
        .unwrap();
        let rows = word_occurrence_distribution(&corpus, &[toks("the UNK car")]).unwrap();
        // Support 1: the black cab an red train orange green; support 2: a car.
        assert_eq!(rows[0], DistributionRow { support: 1, in_output: 1, total: 8 });
        assert_eq!(rows[1], DistributionRow { support: 2, in_output: 1, total: 2 });
        assert_eq!(rows[2].total + rows[3].total, 0);
        assert_eq!(format!("{}", rows[0]), "1\t1/8 (12.5%)");
    }

    #[test]
    fn identical_systems_fill_last_row() {
        let s = vec![sent("x y z"), sent("p q")];
        let corpus = CombinationCorpus::from_sentences(vec![s.clone(); 3], None).unwrap();
        let out: Vec<Vec<String>> = s.iter().map(|x| x.tokens().to_vec()).collect();
        let rows = word_occurrence_distribution(&corpus, &out).unwrap();
        assert_eq!(rows[2], DistributionRow { support: 3, in_output: 5, total: 5 });
        assert_eq!(rows[2].percentage(), 100.0);
        assert_eq!(rows, word_occurrence_distribution(&corpus, &out).unwrap());
        assert!(word_occurrence_distribution(&corpus, &out[..1]).is_err());
    }

    #[test]
    fn recovery_uses_alignment() {
        let refs = vec![toks("a b c d")];
        let labels = [
            PlantedLabel { sentence_index: 0, position: 1, correct_system: 0 },
            PlantedLabel { sentence_index: 0, position: 2, correct_system: 1 },
        ];
        let got = planted_recovery(&[toks("a b x d")], &refs, &labels).unwrap();
        assert_eq!(got, Recovery { recovered: 1, total: 2 });
        let got = planted_recovery(&[toks("z a b c d")], &refs, &labels).unwrap();
        assert_eq!(got.recovered, 2);
        let bad = [PlantedLabel { sentence_index: 0, position: 9, correct_system: 0 }];
        assert!(planted_recovery(&[toks("a")], &refs, &bad).is_err());
    }
}
