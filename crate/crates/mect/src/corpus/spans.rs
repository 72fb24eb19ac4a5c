//! Entity spans and their extraction from per-character label sequences.

use std::collections::BTreeSet;

use super::conll::Scheme;

/// An entity occurrence: 1-based inclusive character positions plus type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub ty: String,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, ty: impl Into<String>) -> Self {
        let span = EntitySpan { start, end, ty: ty.into() };
        debug_assert!(span.start <= span.end);
        span
    }
}

/// Extraction result: the well-formed spans plus the number of malformed
/// runs that had to be dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanExtraction {
    pub spans: BTreeSet<EntitySpan>,
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Middle(&'a str),
    End(&'a str),
    Single(&'a str),
}

fn parse_bmes(label: &str) -> Tag<'_> {
    if label == "O" {
        return Tag::Outside;
    }
    match label.split_once('-') {
        Some(("B", ty)) => Tag::Begin(ty),
        Some(("M", ty)) => Tag::Middle(ty),
        Some(("E", ty)) => Tag::End(ty),
        Some(("S", ty)) => Tag::Single(ty),
        // Loaders validate labels; anything else is treated as a stray tag
        // and dropped by the repair rule below.
        _ => Tag::Middle(label),
    }
}

/// Extracts maximal well-formed spans from a label sequence.
///
/// Repair rule: a run that does not read exactly `S-X` or `B-X M-X* E-X`
/// (consistent type throughout) is dropped and counted; scanning resumes at
/// the first label that did not fit, so a valid span immediately after a
/// broken run is still found. BIO input is first converted to the canonical
/// BMES form.
pub fn spans_from_labels(labels: &[String], scheme: Scheme) -> SpanExtraction {
    let converted;
    let labels = match scheme {
        Scheme::Bmes => labels,
        Scheme::Bio => {
            converted = super::conll::bio_to_bmes(labels);
            &converted
        }
    };
    let tags: Vec<Tag> = labels.iter().map(|l| parse_bmes(l)).collect();
    let mut spans = BTreeSet::new();
    let mut repairs = 0;
    let mut i = 0;
    while i < tags.len() {
        match &tags[i] {
            Tag::Outside => i += 1,
            Tag::Single(ty) => {
                spans.insert(EntitySpan::new(i + 1, i + 1, *ty));
                i += 1;
            }
            Tag::Begin(ty) => {
                let mut j = i + 1;
                while j < tags.len() && tags[j] == Tag::Middle(ty) {
                    j += 1;
                }
                if j < tags.len() && tags[j] == Tag::End(ty) {
                    spans.insert(EntitySpan::new(i + 1, j + 1, *ty));
                    i = j + 1;
                } else {
                    // B without a matching E: drop the B..M* prefix and
                    // rescan from the label that broke the run.
                    repairs += 1;
                    i = j;
                }
            }
            Tag::Middle(_) | Tag::End(_) => {
                repairs += 1;
                i += 1;
            }
        }
    }
    SpanExtraction { spans, repairs }
}

/// Renders non-overlapping spans back into a BMES label sequence of the
/// given length. Inverse of `spans_from_labels` on well-formed input.
pub fn labels_from_spans<'a>(
    spans: impl IntoIterator<Item = &'a EntitySpan>,
    len: usize,
) -> Vec<String> {
    let mut labels = vec!["O".to_string(); len];
    for span in spans {
        debug_assert!(span.start >= 1 && span.end <= len);
        if span.start == span.end {
            labels[span.start - 1] = format!("S-{}", span.ty);
        } else {
            labels[span.start - 1] = format!("B-{}", span.ty);
            for pos in span.start..span.end - 1 {
                labels[pos] = format!("M-{}", span.ty);
            }
            labels[span.end - 1] = format!("E-{}", span.ty);
        }
    }
    labels
}
