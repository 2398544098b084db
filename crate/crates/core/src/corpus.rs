//! Tokenized parallel system outputs and references.
//!
//! Files hold one sentence per line with tokens separated by spaces. Input is
//! taken as already tokenized; case is preserved here and only the metrics
//! lowercase.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, BOS, EPS, UNK, UNKNOWN};

/// Tokens that carry lattice or model meaning and may not occur in input text.
pub const RESERVED_TOKENS: [&str; 4] = [EPS, UNK, BOS, UNKNOWN];

pub fn is_reserved(token: &str) -> bool {
    RESERVED_TOKENS.contains(&token)
}

/// A pre-tokenized sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    /// Builds a sentence, rejecting empty and reserved tokens.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InputValidation(format!("malformed token {t:?}")));
            }
            if is_reserved(t) {
                return Err(Error::InputValidation(format!("reserved token {t:?} in input")));
            }
        }
        Ok(Sentence { tokens })
    }

    /// Splits a line on whitespace.
    pub fn parse(line: &str) -> Result<Self> {
        Sentence::new(line.split_whitespace())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl TryFrom<Vec<String>> for Sentence {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Sentence::new(tokens)
    }
}

impl From<Sentence> for Vec<String> {
    fn from(s: Sentence) -> Self {
        s.tokens
    }
}

impl AsRef<[String]> for Sentence {
    fn as_ref(&self) -> &[String] {
        &self.tokens
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub system_id: usize,
    pub name: String,
    pub sentences: Vec<Sentence>,
}

/// The I system outputs of one test set, plus optional references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinationCorpus {
    systems: Vec<SystemOutput>,
    references: Option<Vec<Sentence>>,
}

impl CombinationCorpus {
    /// Checks I ≥ 2, dense system ids and equal sentence counts.
    pub fn new(systems: Vec<SystemOutput>, references: Option<Vec<Sentence>>) -> Result<Self> {
        if systems.len() < 2 {
            return Err(Error::CorpusShape(format!("need at least 2 systems, got {}", systems.len())));
        }
        let size = systems[0].sentences.len();
        for (i, sys) in systems.iter().enumerate() {
            if sys.system_id != i {
                return Err(Error::CorpusShape(format!(
                    "system `{}` has id {} at position {i}",
                    sys.name, sys.system_id
                )));
            }
            if sys.sentences.len() != size {
                return Err(Error::CorpusShape(format!(
                    "system `{}` has {} sentences, expected {size}",
                    sys.name,
                    sys.sentences.len()
                )));
            }
        }
        if let Some(refs) = &references {
            if refs.len() != size {
                return Err(Error::CorpusShape(format!("references have {} sentences, expected {size}", refs.len())));
            }
        }
        Ok(CombinationCorpus { systems, references })
    }

    /// Convenience constructor naming systems `sys0`, `sys1`, ...
    pub fn from_sentences(systems: Vec<Vec<Sentence>>, references: Option<Vec<Sentence>>) -> Result<Self> {
        let systems = systems
            .into_iter()
            .enumerate()
            .map(|(i, sentences)| SystemOutput { system_id: i, name: format!("sys{i}"), sentences })
            .collect();
        CombinationCorpus::new(systems, references)
    }

    pub fn num_systems(&self) -> usize {
        self.systems.len()
    }

    /// Number of sentences S.
    pub fn len(&self) -> usize {
        self.systems[0].sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn systems(&self) -> &[SystemOutput] {
        &self.systems
    }

    pub fn references(&self) -> Option<&[Sentence]> {
        self.references.as_deref()
    }

    /// The I hypotheses of sentence `index`, ordered by system id.
    pub fn hypotheses(&self, index: usize) -> Vec<&Sentence> {
        self.systems.iter().map(|s| &s.sentences[index]).collect()
    }

    /// Every sentence of every system, system-major.
    pub fn all_sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.systems.iter().flat_map(|s| s.sentences.iter())
    }
}

fn read_sentences_with_path(path: &Path) -> Result<Vec<Sentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            Sentence::parse(line).map_err(|e| match e {
                Error::InputValidation(msg) => Error::InputValidation(format!("{}:{}: {msg}", path.display(), n + 1)),
                other => other,
            })
        })
        .collect()
}

/// Reads one sentence per line.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    read_sentences_with_path(path.as_ref())
}

/// Loads I parallel system files and an optional reference file.
pub fn load_corpus<P: AsRef<Path>>(system_paths: &[P], reference_path: Option<&Path>) -> Result<CombinationCorpus> {
    let mut systems = Vec::with_capacity(system_paths.len());
    let mut expected: Option<(usize, PathBuf)> = None;
    for (i, p) in system_paths.iter().enumerate() {
        let path = p.as_ref();
        let sentences = read_sentences_with_path(path)?;
        match &expected {
            None => expected = Some((sentences.len(), path.to_path_buf())),
            Some((n, first)) if *n != sentences.len() => {
                return Err(Error::CorpusShape(format!(
                    "{} has {} lines but {} has {n}",
                    path.display(),
                    sentences.len(),
                    first.display()
                )));
            }
            Some(_) => {}
        }
        let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| format!("sys{i}"));
        systems.push(SystemOutput { system_id: i, name, sentences });
    }
    let references = match reference_path {
        Some(path) => {
            let refs = read_sentences_with_path(path)?;
            if let Some((n, first)) = &expected {
                if refs.len() != *n {
                    return Err(Error::CorpusShape(format!(
                        "{} has {} lines but {} has {n}",
                        path.display(),
                        refs.len(),
                        first.display()
                    )));
                }
            }
            Some(refs)
        }
        None => None,
    };
    CombinationCorpus::new(systems, references)
}

/// Writes token sequences one per line, space-joined.
pub fn write_token_lines<T, S>(lines: &[T], path: impl AsRef<Path>) -> Result<()>
where
    T: AsRef<[S]>,
    S: AsRef<str>,
{
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for line in lines {
        let mut first = true;
        for tok in line.as_ref() {
            if !first {
                out.write_all(b" ").map_err(|e| Error::io(path, e))?;
            }
            first = false;
            out.write_all(tok.as_ref().as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sentences(sentences: &[Sentence], path: impl AsRef<Path>) -> Result<()> {
    write_token_lines(sentences, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(text: &str) -> Sentence {
        Sentence::parse(text).unwrap()
    }

    #[test]
    fn loads_colour_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let lines = ["the black cab", "an red train", "a orange car", "a green car"];
        let mut paths = Vec::new();
        for (i, l) in lines.iter().enumerate() {
            let p = dir.path().join(format!("sys{i}.txt"));
            fs::write(&p, format!("{l}\n")).unwrap();
            paths.push(p);
        }
        let r = dir.path().join("ref.txt");
        fs::write(&r, "the blue car\n").unwrap();
        let corpus = load_corpus(&paths, Some(&r)).unwrap();
        assert_eq!(corpus.num_systems(), 4);
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.hypotheses(0)[1], &s("an red train"));
        assert_eq!(corpus.references().unwrap()[0], s("the blue car"));
    }

    #[test]
    fn identical_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        fs::write(&a, "x y\n").unwrap();
        fs::write(&b, "x y\n").unwrap();
        let corpus = load_corpus(&[&a, &b], None).unwrap();
        assert_eq!(corpus.num_systems(), 2);
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.hypotheses(0)[0], corpus.hypotheses(0)[1]);
    }

    #[test]
    fn mismatched_line_counts_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("three.txt");
        let b = dir.path().join("four.txt");
        fs::write(&a, "a\nb\nc\n").unwrap();
        fs::write(&b, "a\nb\nc\nd\n").unwrap();
        let err = load_corpus(&[&a, &b], None).unwrap_err();
        match err {
            Error::CorpusShape(msg) => assert!(msg.contains("four.txt"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reserved_tokens_rejected() {
        for tok in RESERVED_TOKENS {
            assert!(matches!(Sentence::parse(&format!("a {tok} b")), Err(Error::InputValidation(_))));
        }
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        fs::write(&a, "fine\nhas UNK here\n").unwrap();
        assert!(matches!(load_corpus(&[&a, &a], None), Err(Error::InputValidation(_))));
    }

    #[test]
    fn writes_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out");
        write_sentences(&[s("the blue car")], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "the blue car\n");
        write_sentences(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
    }

    proptest! {
        #[test]
        fn write_then_read_round_trips(
            lines in prop::collection::vec(prop::collection::vec("[a-z0-9'.,-]{1,6}", 0..8), 0..12)
        ) {
            let sentences: Vec<Sentence> =
                lines.iter().map(|l| Sentence::new(l.clone()).unwrap()).collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt");
            write_sentences(&sentences, &p).unwrap();
            prop_assert_eq!(read_sentences(&p).unwrap(), sentences);
        }
    }
}
