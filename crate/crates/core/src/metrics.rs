//! Word and character error rates with substitution/deletion/insertion
//! accounting.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::{Add, AddAssign};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference set has no tokens")]
    EmptyReferenceSet,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Edit counters of one alignment. `n == s + d + c` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditBreakdown {
    pub s: usize,
    pub d: usize,
    pub i: usize,
    pub c: usize,
    pub n: usize,
}

impl EditBreakdown {
    pub fn errors(&self) -> usize {
        self.s + self.d + self.i
    }

    /// `100 * (S + D + I) / N`, `None` when `N == 0`.
    pub fn error_rate(&self) -> Option<f64> {
        (self.n > 0).then(|| 100.0 * self.errors() as f64 / self.n as f64)
    }
}

impl Add for EditBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            s: self.s + o.s,
            d: self.d + o.d,
            i: self.i + o.i,
            c: self.c + o.c,
            n: self.n + o.n,
        }
    }
}

impl AddAssign for EditBreakdown {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for EditBreakdown {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Minimum edit distance alignment with unit costs. Among equal-cost
/// alternatives the backtrace prefers match, then substitution, then
/// deletion, then insertion.
pub fn edit_ops<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut dist = vec![0usize; (n + 1) * w];
    for (j, d) in dist[..w].iter_mut().enumerate() {
        *d = j;
    }
    for i in 1..=n {
        dist[i * w] = i;
        for j in 1..=m {
            let diag =
                dist[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let up = dist[(i - 1) * w + j] + 1;
            let left = dist[i * w + j - 1] + 1;
            dist[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut out = EditBreakdown {
        n,
        ..EditBreakdown::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dist[i * w + j];
        if i > 0 && j > 0 {
            let diag = dist[(i - 1) * w + j - 1];
            if reference[i - 1] == hypothesis[j - 1] && here == diag {
                out.c += 1;
                i -= 1;
                j -= 1;
                continue;
            }
            if here == diag + 1 {
                out.s += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dist[(i - 1) * w + j] + 1 {
            out.d += 1;
            i -= 1;
        } else {
            out.i += 1;
            j -= 1;
        }
    }
    out
}

pub fn word_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Lowercased characters of the trimmed string; whitespace is kept.
pub fn char_tokens(s: &str) -> Vec<char> {
    s.trim().chars().flat_map(char::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub edits: EditBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    pub aggregate: EditBreakdown,
    pub error_rate: f64,
    pub utterances: Vec<UtteranceScore>,
    pub groups: BTreeMap<String, ScoreReport>,
}

impl ScoreReport {
    fn from_scores(utterances: Vec<UtteranceScore>) -> Result<Self, MetricsError> {
        let aggregate: EditBreakdown = utterances.iter().map(|u| u.edits).sum();
        let error_rate = aggregate
            .error_rate()
            .ok_or(MetricsError::EmptyReferenceSet)?;
        Ok(Self {
            aggregate,
            error_rate,
            utterances,
            groups: BTreeMap::new(),
        })
    }

    /// Per-utterance CSV: `utterance_id,ref,hyp,S,D,I,C,N,wer`.
    pub fn write_utterance_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv_writer(out);
        w.write_record(["utterance_id", "ref", "hyp", "S", "D", "I", "C", "N", "wer"])?;
        for u in &self.utterances {
            let e = u.edits;
            let rate = e
                .error_rate()
                .map_or_else(String::new, |r| format!("{r:.4}"));
            w.write_record([
                u.id.clone(),
                u.reference.clone(),
                u.hypothesis.clone(),
                e.s.to_string(),
                e.d.to_string(),
                e.i.to_string(),
                e.c.to_string(),
                e.n.to_string(),
                rate,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary CSV `group,S,D,I,C,N,wer` with an `overall` row followed by
    /// one row per group.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), MetricsError> {
        let mut w = csv_writer(out);
        w.write_record(["group", "S", "D", "I", "C", "N", "wer"])?;
        let mut row = |name: &str, r: &ScoreReport| {
            let e = r.aggregate;
            w.write_record([
                name.to_string(),
                e.s.to_string(),
                e.d.to_string(),
                e.i.to_string(),
                e.c.to_string(),
                e.n.to_string(),
                format!("{:.4}", r.error_rate),
            ])
        };
        row("overall", self)?;
        for (k, g) in &self.groups {
            row(k, g)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Reference/hypothesis pair with the metadata used for grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub group: String,
}

fn score_with<F>(pairs: &[(String, String, String)], edits: F) -> Result<ScoreReport, MetricsError>
where
    F: Fn(&str, &str) -> EditBreakdown,
{
    let scores = pairs
        .iter()
        .map(|(id, r, h)| UtteranceScore {
            id: id.clone(),
            reference: r.clone(),
            hypothesis: h.clone(),
            edits: edits(r, h),
        })
        .collect();
    ScoreReport::from_scores(scores)
}

fn word_edits(r: &str, h: &str) -> EditBreakdown {
    edit_ops(&word_tokens(r), &word_tokens(h))
}

fn char_edits(r: &str, h: &str) -> EditBreakdown {
    edit_ops(&char_tokens(r), &char_tokens(h))
}

fn with_ids<S: AsRef<str>>(pairs: &[(S, S)]) -> Vec<(String, String, String)> {
    pairs
        .iter()
        .enumerate()
        .map(|(k, (r, h))| {
            (
                k.to_string(),
                r.as_ref().to_string(),
                h.as_ref().to_string(),
            )
        })
        .collect()
}

/// Corpus-level word error rate over aggregated counts.
pub fn wer<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<ScoreReport, MetricsError> {
    score_with(&with_ids(pairs), word_edits)
}

/// Character error rate; whitespace counts as a token.
pub fn cer<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<ScoreReport, MetricsError> {
    score_with(&with_ids(pairs), char_edits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Word,
    Char,
}

/// Overall report plus one sub-report per distinct `group` value. Groups
/// whose references are all empty are omitted.
pub fn grouped_scores(pairs: &[ScoredPair], unit: Unit) -> Result<ScoreReport, MetricsError> {
    let edits = match unit {
        Unit::Word => word_edits,
        Unit::Char => char_edits,
    };
    let mut buckets: BTreeMap<&str, Vec<(String, String, String)>> = BTreeMap::new();
    let mut all = Vec::with_capacity(pairs.len());
    for p in pairs {
        let t = (p.id.clone(), p.reference.clone(), p.hypothesis.clone());
        buckets.entry(p.group.as_str()).or_default().push(t.clone());
        all.push(t);
    }
    let mut report = score_with(&all, edits)?;
    for (k, v) in buckets {
        match score_with(&v, edits) {
            Ok(sub) => {
                report.groups.insert(k.to_string(), sub);
            }
            Err(MetricsError::EmptyReferenceSet) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
