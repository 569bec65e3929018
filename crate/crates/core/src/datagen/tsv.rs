//! Tab-separated corpus files. Token and concept lists are space-separated
//! integers; one record per LF-terminated line.
//!
//! | file     | columns                                                     |
//! |----------|-------------------------------------------------------------|
//! | parallel | `a_tokens  b_tokens  concepts  split`                       |
//! | sts      | `sent1  sent2  concepts1  concepts2  gold_sim`              |
//! | nli      | `premise  hypothesis  premise_concepts  hyp_concepts  label` |
//! | mining   | `F  fraction` once, then `A|B  tokens  concepts`, `G  i  j` |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{Concept, MiningCorpus, NliTriple, ParallelCorpus, ParallelPair, Sentence, Split, StsPair};
use crate::encoder::TokenSequence;
use crate::error::{Error, Result};
use crate::trainer::nli::NliLabel;

fn join(ids: &[u32]) -> String {
    let mut s = String::with_capacity(ids.len() * 4);
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{id}").expect("writing to a String");
    }
    s
}

struct Reader<'a> {
    path: &'a Path,
    line: usize,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn columns<'l>(&self, line: &'l str, expected: usize) -> Result<Vec<&'l str>> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != expected {
            return Err(self.err(format!("expected {expected} columns, found {}", cols.len())));
        }
        Ok(cols)
    }

    fn ids(&self, field: &str) -> Result<Vec<u32>> {
        field
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u32>()
                    .map_err(|e| self.err(format!("bad integer `{s}`: {e}")))
            })
            .collect()
    }

    fn tokens(&self, field: &str) -> Result<TokenSequence> {
        TokenSequence::new(self.ids(field)?).map_err(|_| self.err("empty token sequence"))
    }

    fn parse<T: FromStr>(&self, field: &str, what: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        field
            .parse::<T>()
            .map_err(|e| self.err(format!("bad {what} `{field}`: {e}")))
    }
}

/// Non-blank lines with their 1-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(Error::at(path))?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect();
    if lines.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(lines)
}

pub fn save_tsv(corpus: &ParallelCorpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in &corpus.pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            join(p.a.ids()),
            join(p.b.ids()),
            join(&p.concepts),
            p.split
        )
        .expect("writing to a String");
    }
    fs::write(path, out).map_err(Error::at(path))?;
    Ok(())
}

pub fn load_tsv(path: &Path) -> Result<ParallelCorpus> {
    let mut pairs = Vec::new();
    for (line, text) in read_lines(path)? {
        let r = Reader { path, line };
        let cols = r.columns(&text, 4)?;
        let split: Split = cols[3].parse().map_err(|e: String| r.err(e))?;
        pairs.push(ParallelPair {
            a: r.tokens(cols[0])?,
            b: r.tokens(cols[1])?,
            concepts: r.ids(cols[2])?,
            split,
        });
    }
    Ok(ParallelCorpus { pairs })
}

pub fn save_sts_tsv(pairs: &[StsPair], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in pairs {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            join(p.sent1.ids()),
            join(p.sent2.ids()),
            join(&p.concepts1),
            join(&p.concepts2),
            p.gold_sim
        )
        .expect("writing to a String");
    }
    fs::write(path, out).map_err(Error::at(path))?;
    Ok(())
}

pub fn load_sts_tsv(path: &Path) -> Result<Vec<StsPair>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let r = Reader { path, line };
            let cols = r.columns(&text, 5)?;
            Ok(StsPair {
                sent1: r.tokens(cols[0])?,
                sent2: r.tokens(cols[1])?,
                concepts1: r.ids(cols[2])?,
                concepts2: r.ids(cols[3])?,
                gold_sim: r.parse(cols[4], "similarity")?,
            })
        })
        .collect()
}

pub fn save_nli_tsv(triples: &[NliTriple], path: &Path) -> Result<()> {
    let mut out = String::new();
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            join(t.premise.ids()),
            join(t.hypothesis.ids()),
            join(&t.premise_concepts),
            join(&t.hypothesis_concepts),
            t.label
        )
        .expect("writing to a String");
    }
    fs::write(path, out).map_err(Error::at(path))?;
    Ok(())
}

pub fn load_nli_tsv(path: &Path) -> Result<Vec<NliTriple>> {
    read_lines(path)?
        .into_iter()
        .map(|(line, text)| {
            let r = Reader { path, line };
            let cols = r.columns(&text, 5)?;
            Ok(NliTriple {
                premise: r.tokens(cols[0])?,
                hypothesis: r.tokens(cols[1])?,
                premise_concepts: r.ids(cols[2])?,
                hypothesis_concepts: r.ids(cols[3])?,
                label: r.parse::<NliLabel>(cols[4], "label")?,
            })
        })
        .collect()
}

pub fn save_mining_tsv(corpus: &MiningCorpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "F\t{}", corpus.parallel_fraction).expect("writing to a String");
    for (tag, side) in [("A", &corpus.side_a), ("B", &corpus.side_b)] {
        for s in side {
            writeln!(out, "{tag}\t{}\t{}", join(s.tokens.ids()), join(&s.concepts)).expect("writing to a String");
        }
    }
    for (i, j) in &corpus.gold_pairs {
        writeln!(out, "G\t{i}\t{j}").expect("writing to a String");
    }
    fs::write(path, out).map_err(Error::at(path))?;
    Ok(())
}

pub fn load_mining_tsv(path: &Path) -> Result<MiningCorpus> {
    let mut corpus = MiningCorpus {
        side_a: Vec::new(),
        side_b: Vec::new(),
        gold_pairs: Vec::new(),
        parallel_fraction: f64::NAN,
    };
    for (line, text) in read_lines(path)? {
        let r = Reader { path, line };
        let tag = text.split('\t').next().unwrap_or_default();
        match tag {
            "F" => {
                let cols = r.columns(&text, 2)?;
                corpus.parallel_fraction = r.parse(cols[1], "fraction")?;
            }
            "A" | "B" => {
                let cols = r.columns(&text, 3)?;
                let sentence = Sentence {
                    tokens: r.tokens(cols[1])?,
                    concepts: r.ids(cols[2])? as Vec<Concept>,
                };
                if tag == "A" {
                    corpus.side_a.push(sentence);
                } else {
                    corpus.side_b.push(sentence);
                }
            }
            "G" => {
                let cols = r.columns(&text, 3)?;
                corpus
                    .gold_pairs
                    .push((r.parse(cols[1], "index")?, r.parse(cols[2], "index")?));
            }
            other => return Err(r.err(format!("unknown record tag `{other}`"))),
        }
    }
    if corpus.parallel_fraction.is_nan() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "missing `F` record".into(),
        });
    }
    for &(i, j) in &corpus.gold_pairs {
        if i >= corpus.side_a.len() || j >= corpus.side_b.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("gold pair ({i}, {j}) out of range"),
            });
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        gen_mining_corpus, gen_nli_triples, gen_parallel_corpus, gen_sts_pairs, Lexicon, LexiconConfig, MiningSpec,
        PairSpec, ParallelSpec,
    };

    fn lex() -> Lexicon {
        Lexicon::generate(&LexiconConfig::default(), 1).unwrap()
    }

    #[test]
    fn parallel_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tsv");
        let spec = ParallelSpec {
            train: 40,
            validation: 5,
            test: 5,
            ..ParallelSpec::default()
        };
        let corpus = gen_parallel_corpus(&lex(), &spec, 3).unwrap();
        save_tsv(&corpus, &path).unwrap();
        assert_eq!(load_tsv(&path).unwrap(), corpus);
    }

    #[test]
    fn sts_nli_mining_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let l = lex();
        let spec = PairSpec {
            n: 30,
            ..PairSpec::default()
        };
        let sts = gen_sts_pairs(&l, &spec, 1).unwrap();
        save_sts_tsv(&sts, &dir.path().join("s.tsv")).unwrap();
        assert_eq!(load_sts_tsv(&dir.path().join("s.tsv")).unwrap(), sts);

        let nli = gen_nli_triples(&l, &spec, 1).unwrap();
        save_nli_tsv(&nli, &dir.path().join("n.tsv")).unwrap();
        assert_eq!(load_nli_tsv(&dir.path().join("n.tsv")).unwrap(), nli);

        let m = gen_mining_corpus(
            &l,
            &MiningSpec {
                n_a: 40,
                n_b: 30,
                ..MiningSpec::default()
            },
            2,
        )
        .unwrap();
        save_mining_tsv(&m, &dir.path().join("m.tsv")).unwrap();
        assert_eq!(load_mining_tsv(&dir.path().join("m.tsv")).unwrap(), m);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.tsv");
        fs::write(&path, "").unwrap();
        assert!(matches!(load_tsv(&path), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn bad_column_count_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        let mut text = String::new();
        for _ in 0..6 {
            text.push_str("1 2\t3 4\t5 6\ttrain\n");
        }
        text.push_str("1 2\t3 4\ttrain\n");
        fs::write(&path, text).unwrap();
        match load_tsv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_tsv(Path::new("/nonexistent/x.tsv")),
            Err(Error::File { .. })
        ));
    }
}
