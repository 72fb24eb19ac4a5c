//! Dataset ingestion: CoNLL-style tagged text, lexicons, radical
//! decomposition tables, optional pretrained embeddings, and the
//! vocabularies built over them.

pub mod conll;
pub mod lexicon;
pub mod radicals;
pub mod spans;
pub mod vocab;

pub use conll::{load_conll, Scheme, Sentence};
pub use lexicon::{load_embeddings, load_lexicon, Lexicon, WordMatch};
pub use radicals::{load_radical_table, RadicalTable};
pub use spans::{labels_from_spans, spans_from_labels, EntitySpan, SpanExtraction};
pub use vocab::Vocab;

use std::collections::BTreeMap;
use std::fmt;

/// Sentence/entity counts in the shape of the usual dataset statistics
/// tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub entities: usize,
    pub per_type: BTreeMap<String, usize>,
    /// Malformed label runs dropped while extracting gold spans.
    pub repairs: usize,
}

pub fn corpus_stats(sentences: &[Sentence]) -> CorpusStats {
    let mut stats = CorpusStats {
        sentences: sentences.len(),
        entities: 0,
        per_type: BTreeMap::new(),
        repairs: 0,
    };
    for s in sentences {
        let extraction = spans_from_labels(&s.labels, Scheme::Bmes);
        stats.entities += extraction.spans.len();
        stats.repairs += extraction.repairs;
        for span in &extraction.spans {
            *stats.per_type.entry(span.ty.clone()).or_insert(0) += 1;
        }
    }
    stats
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8}", "Sentences", self.sentences)?;
        writeln!(f, "{:<12} {:>8}", "Entities", self.entities)?;
        for (ty, n) in &self.per_type {
            writeln!(f, "{:<12} {:>8}", format!("  {ty}"), n)?;
        }
        if self.repairs > 0 {
            writeln!(f, "{:<12} {:>8}", "Repairs", self.repairs)?;
        }
        Ok(())
    }
}
