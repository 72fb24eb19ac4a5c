//! CoNLL-style loader: one `char<TAB>label` per line, blank line between
//! sentences, UTF-8 throughout.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tagging scheme of a dataset file. Sentences are stored canonically in
/// BMES; BIO input is converted on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Bmes,
    Bio,
}

impl Scheme {
    fn prefixes(self) -> &'static [&'static str] {
        match self {
            Scheme::Bmes => &["B", "M", "E", "S"],
            Scheme::Bio => &["B", "I"],
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BMES" => Ok(Scheme::Bmes),
            "BIO" => Ok(Scheme::Bio),
            other => Err(Error::Config(format!("unknown scheme '{other}' (expected BMES or BIO)"))),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Bmes => write!(f, "BMES"),
            Scheme::Bio => write!(f, "BIO"),
        }
    }
}

/// One tagged sentence. `labels` are canonical BMES regardless of the
/// scheme the file was declared with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub chars: Vec<char>,
    pub labels: Vec<String>,
    pub scheme: Scheme,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }
}

fn validate_label(label: &str, scheme: Scheme) -> std::result::Result<(), String> {
    if label == "O" {
        return Ok(());
    }
    match label.split_once('-') {
        Some((prefix, ty)) if !ty.is_empty() => {
            if scheme.prefixes().contains(&prefix) {
                Ok(())
            } else {
                Err(format!("unknown tag prefix '{prefix}' under scheme {scheme}"))
            }
        }
        _ => Err(format!("malformed label '{label}'")),
    }
}

/// Converts a (possibly noisy) BIO sequence to BMES using local context.
/// Orphan `I-` tags map to `M-`/`E-` and are later dropped by the span
/// repair rule, matching a strict reading of BIO.
pub(crate) fn bio_to_bmes(labels: &[String]) -> Vec<String> {
    let ty_of = |l: &String| l.split_once('-').map(|(_, t)| t.to_string());
    let prefix_of = |l: &String| l.split_once('-').map(|(p, _)| p.to_string());
    (0..labels.len())
        .map(|i| {
            let label = &labels[i];
            if label == "O" {
                return "O".to_string();
            }
            let ty = ty_of(label).unwrap_or_default();
            let continues = i + 1 < labels.len()
                && prefix_of(&labels[i + 1]).as_deref() == Some("I")
                && ty_of(&labels[i + 1]).as_deref() == Some(&ty);
            match prefix_of(label).as_deref() {
                Some("B") => {
                    if continues {
                        format!("B-{ty}")
                    } else {
                        format!("S-{ty}")
                    }
                }
                Some("I") => {
                    if continues {
                        format!("M-{ty}")
                    } else {
                        format!("E-{ty}")
                    }
                }
                _ => label.clone(),
            }
        })
        .collect()
}

/// Loads a tagged dataset. Errors carry the 1-based line number of the
/// offending line.
pub fn load_conll(path: impl AsRef<Path>, scheme: Scheme) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut sentences = Vec::new();
    let mut chars: Vec<char> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut flush = |chars: &mut Vec<char>, labels: &mut Vec<String>| {
        if !chars.is_empty() {
            let raw = std::mem::take(labels);
            let canonical = match scheme {
                Scheme::Bmes => raw,
                Scheme::Bio => bio_to_bmes(&raw),
            };
            sentences.push(Sentence { chars: std::mem::take(chars), labels: canonical, scheme });
        }
    };
    for (lineno, raw_line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut chars, &mut labels);
            continue;
        }
        let (ch_field, label) = line.split_once('\t').ok_or_else(|| {
            Error::parse(path, lineno, format!("expected `char<TAB>label`, got '{line}'"))
        })?;
        let mut ch_iter = ch_field.chars();
        let ch = match (ch_iter.next(), ch_iter.next()) {
            (Some(c), None) => c,
            _ => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected a single character, got '{ch_field}'"),
                ))
            }
        };
        validate_label(label, scheme).map_err(|msg| Error::parse(path, lineno, msg))?;
        chars.push(ch);
        labels.push(label.to_string());
    }
    flush(&mut chars, &mut labels);
    Ok(sentences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, spans_from_labels, EntitySpan};
    use std::collections::BTreeSet;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn two_line_file_gives_one_loc_span() {
        let f = write_temp("中\tB-LOC\n国\tE-LOC\n");
        let sentences = load_conll(f.path(), Scheme::Bmes).unwrap();
        assert_eq!(sentences.len(), 1);
        assert_eq!(sentences[0].chars, vec!['中', '国']);
        let spans = spans_from_labels(&sentences[0].labels, Scheme::Bmes).spans;
        assert_eq!(spans, BTreeSet::from([EntitySpan::new(1, 2, "LOC")]));
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let f = write_temp("");
        assert!(load_conll(f.path(), Scheme::Bmes).unwrap().is_empty());
    }

    #[test]
    fn stats_match_brute_counted_entities() {
        let f = write_temp(
            "我\tO\n爱\tO\n北\tB-LOC\n京\tE-LOC\n\n\
             张\tB-PER\n三\tE-PER\n说\tO\n\n\
             上\tB-LOC\n海\tE-LOC\n和\tO\n广\tB-LOC\n州\tE-LOC\n",
        );
        let sentences = load_conll(f.path(), Scheme::Bmes).unwrap();
        let stats = corpus_stats(&sentences);
        assert_eq!(stats.sentences, 3);
        // Brute count: scan every window of every sentence with the
        // enumeration rule.
        let mut brute = 0;
        for s in &sentences {
            for start in 0..s.len() {
                for end in start..s.len() {
                    for ty in ["LOC", "PER"] {
                        let ok = if start == end {
                            s.labels[start] == format!("S-{ty}")
                        } else {
                            s.labels[start] == format!("B-{ty}")
                                && s.labels[end] == format!("E-{ty}")
                                && (start + 1..end).all(|k| s.labels[k] == format!("M-{ty}"))
                        };
                        if ok {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(stats.entities, brute);
        assert_eq!(stats.entities, 4);
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let f = write_temp("中\tB-LOC\n国国 E-LOC\n");
        let err = load_conll(f.path(), Scheme::Bmes).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn unknown_prefix_is_rejected_per_scheme() {
        let f = write_temp("中\tI-LOC\n");
        let err = load_conll(f.path(), Scheme::Bmes).unwrap_err();
        assert!(err.to_string().contains("unknown tag prefix"), "{err}");
        // Same line parses fine when the file is declared BIO.
        let f = write_temp("中\tB-LOC\n国\tI-LOC\n");
        let sentences = load_conll(f.path(), Scheme::Bio).unwrap();
        assert_eq!(sentences[0].labels, vec!["B-LOC", "E-LOC"]);
    }

    #[test]
    fn mixed_scheme_file_is_a_parse_error() {
        let f = write_temp("中\tB-LOC\n国\tM-LOC\n人\tI-LOC\n");
        assert!(load_conll(f.path(), Scheme::Bmes).is_err());
    }
}
