//! Evaluation metrics, length bucketing and report tables.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::error::{Error, Result};

/// Length buckets as used by the long-code benchmarks.
pub const DEFAULT_EDGES: [u64; 5] = [0, 2048, 4096, 8192, 16384];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub lo: u64,
    pub hi: u64,
    /// Indices into the bucketed input, in input order.
    pub members: Vec<usize>,
}

impl Bucket {
    pub fn label(&self) -> String {
        format!("{}-{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bucketed {
    pub buckets: Vec<Bucket>,
    /// Items at or beyond the last edge.
    pub overflow: Vec<usize>,
    /// Items below the first edge.
    pub underflow: Vec<usize>,
}

impl Bucketed {
    pub fn flagged(&self) -> bool {
        !self.overflow.is_empty() || !self.underflow.is_empty()
    }
}

/// Assigns each length to the half-open bucket `[lo, hi)` containing it.
pub fn bucket_by_length(lengths: &[u64], edges: &[u64]) -> Result<Bucketed> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(format!(
            "bucket edges must be at least two strictly increasing values: {edges:?}"
        )));
    }
    let mut buckets: Vec<Bucket> = edges
        .windows(2)
        .map(|w| Bucket {
            lo: w[0],
            hi: w[1],
            members: Vec::new(),
        })
        .collect();
    let mut overflow = Vec::new();
    let mut underflow = Vec::new();
    for (i, &len) in lengths.iter().enumerate() {
        if len < edges[0] {
            underflow.push(i);
        } else if len >= *edges.last().expect("checked above") {
            overflow.push(i);
        } else {
            let b = edges.partition_point(|&e| e <= len) - 1;
            buckets[b].members.push(i);
        }
    }
    Ok(Bucketed {
        buckets,
        overflow,
        underflow,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metrics {
    Lm { loss: f64, ppl: f64, acc: f64 },
    Recall { recall: f64 },
    EditSim { edit_sim: f64 },
}

impl Metrics {
    /// Perplexity is always derived from the loss, never stored separately.
    pub fn lm(loss: f64, acc: f64) -> Self {
        Self::Lm {
            loss,
            ppl: loss.exp(),
            acc,
        }
    }

    fn is_finite(&self) -> bool {
        match *self {
            Self::Lm { loss, ppl, acc } => loss.is_finite() && ppl.is_finite() && acc.is_finite(),
            Self::Recall { recall } => recall.is_finite(),
            Self::EditSim { edit_sim } => edit_sim.is_finite(),
        }
    }

    fn columns(&self) -> &'static [&'static str] {
        match self {
            Self::Lm { .. } => &["loss", "ppl", "acc"],
            Self::Recall { .. } => &["recall"],
            Self::EditSim { .. } => &["edit_sim"],
        }
    }

    fn values(&self) -> Vec<f64> {
        match *self {
            Self::Lm { loss, ppl, acc } => vec![loss, ppl, acc],
            Self::Recall { recall } => vec![recall],
            Self::EditSim { edit_sim } => vec![edit_sim],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub bucket: String,
    /// `all` or `last_<K>` for language modelling, `all` otherwise.
    pub scope: String,
    /// Tokens (LM) or records (task metrics) averaged over.
    pub count: usize,
    pub metrics: Metrics,
    /// Empty when clean; otherwise a short reason such as `short_suffix`.
    pub flag: String,
}

impl ReportRow {
    pub fn new(bucket: impl Into<String>, scope: impl Into<String>, count: usize, metrics: Metrics) -> Self {
        let flag = if metrics.is_finite() {
            String::new()
        } else {
            "non_finite".into()
        };
        Self {
            bucket: bucket.into(),
            scope: scope.into(),
            count,
            metrics,
            flag,
        }
    }

    fn add_flag(&mut self, flag: &str) {
        if !self.flag.is_empty() {
            self.flag.push(',');
        }
        self.flag.push_str(flag);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    /// Lines emitted as `#` comments above the table.
    pub notes: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        let columns = self.rows.first().map_or(&[][..], |r| r.metrics.columns());
        let _ = writeln!(out, "bucket\tscope\tcount\t{}\tflag", columns.join("\t"));
        for r in &self.rows {
            let values: Vec<String> = r.metrics.values().iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.bucket,
                r.scope,
                r.count,
                values.join("\t"),
                r.flag
            );
        }
        out
    }
}

/// Mean loss, perplexity and greedy accuracy over all tokens and over the
/// last `last_k` tokens.
pub fn lm_metrics(bucket: &str, nlls: &[f64], correct: &[bool], last_k: usize) -> Result<Vec<ReportRow>> {
    if last_k == 0 {
        return Err(Error::InvalidConfig("last_k must be >= 1".into()));
    }
    if nlls.len() != correct.len() {
        return Err(Error::LengthMismatch(format!(
            "{} token losses but {} accuracy flags",
            nlls.len(),
            correct.len()
        )));
    }
    let row = |scope: String, nll: &[f64], ok: &[bool]| {
        let n = nll.len();
        let loss = nll.iter().sum::<f64>() / n as f64;
        let acc = ok.iter().filter(|&&c| c).count() as f64 / n as f64;
        ReportRow::new(bucket, scope, n, Metrics::lm(loss, acc))
    };
    let mut all = row("all".into(), nlls, correct);
    let start = nlls.len().saturating_sub(last_k);
    let mut last = row(format!("last_{last_k}"), &nlls[start..], &correct[start..]);
    if nlls.is_empty() {
        all.add_flag("empty");
        last.add_flag("empty");
    } else if nlls.len() < last_k {
        last.add_flag("short_suffix");
    }
    Ok(vec![all, last])
}

/// Fraction of the gold symbols present in the prediction. Matching is
/// exact and case-sensitive; duplicates count once.
pub fn recall<S: AsRef<str>, G: AsRef<str>>(predicted: &[S], gold: &[G]) -> Result<f64> {
    let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    if gold.is_empty() {
        return Err(Error::MalformedTask("recall needs a non-empty gold set".into()));
    }
    let predicted: HashSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    Ok(predicted.intersection(&gold).count() as f64 / gold.len() as f64)
}

/// `1 - levenshtein / max(len)` over characters; two empty strings are
/// identical.
pub fn edit_similarity(pred: &str, gold: &str) -> f64 {
    let longest = pred.chars().count().max(gold.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(pred, gold) as f64 / longest as f64
}

/// The predicted line inside a raw completion: the first line carrying no
/// backtick, `#` or `//` (so code fences and comments are skipped), or the
/// first line when every line carries one.
pub fn completion_line(raw: &str) -> &str {
    let text = raw.trim_start_matches(['\n', '\r']);
    let mut lines = text.lines();
    let first = lines.clone().next().unwrap_or("");
    lines
        .find(|l| !l.contains('`') && !l.contains('#') && !l.contains("//"))
        .unwrap_or(first)
}

static ITEM_SPLIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)[\n,;]|(?:^|\s)\d+[.)](?:\s+|$)").expect("valid regex"));
static IDENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").expect("valid regex"));

/// Pulls identifier names out of a model's list-style answer.
///
/// Items are separated by newlines, commas, semicolons or numbered markers
/// (`1.`, `2)`). Bullets, quotes, brackets, a leading `def`/`class` keyword
/// and a trailing `()` or `:` are stripped; an item that is still not a
/// single (possibly dotted) identifier is dropped.
pub fn parse_model_output_symbols(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for item in ITEM_SPLIT.split(raw) {
        let mut s = item.trim().trim_matches(|c: char| {
            matches!(c, '-' | '*' | '•' | '`' | '\'' | '"' | '[' | ']' | '{' | '}') || c.is_whitespace()
        });
        for kw in ["async def ", "def ", "class "] {
            if let Some(rest) = s.strip_prefix(kw) {
                s = rest.trim_start();
            }
        }
        let s = s
            .trim_end_matches(':')
            .trim_end_matches("()")
            .trim_end_matches(['`', '\'', '"']);
        let name = s.rsplit('.').next().unwrap_or(s);
        if IDENT.is_match(name) {
            out.push(name.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_open_buckets() {
        let b = bucket_by_length(&[0, 2047, 2048, 4095, 4096], &[0, 2048, 4096]).unwrap();
        assert_eq!(b.buckets[0].members, [0, 1]);
        assert_eq!(b.buckets[1].members, [2, 3]);
        assert_eq!(b.overflow, [4]);
        assert!(b.flagged());
    }

    #[test]
    fn empty_input_and_bad_edges() {
        let b = bucket_by_length(&[], &DEFAULT_EDGES).unwrap();
        assert!(b.buckets.iter().all(|b| b.members.is_empty()));
        assert!(!b.flagged());
        assert!(bucket_by_length(&[1], &[0, 0, 5]).is_err());
        assert!(bucket_by_length(&[1], &[4]).is_err());
        assert_eq!(bucket_by_length(&[3], &[5, 10]).unwrap().underflow, [0]);
    }

    #[test]
    fn lm_rows() {
        let ln2 = std::f64::consts::LN_2;
        let rows = lm_metrics("b", &[ln2; 8], &[true; 8], 4).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            let Metrics::Lm { ppl, acc, .. } = r.metrics else {
                panic!()
            };
            assert!((ppl - 2.0).abs() < 1e-12);
            assert_eq!(acc, 1.0);
            assert!(r.flag.is_empty());
        }
        assert_eq!(rows[1].count, 4);
        assert_eq!(rows[1].scope, "last_4");
    }

    #[test]
    fn short_suffix_flagged() {
        let rows = lm_metrics("b", &[1.0, 2.0], &[true, false], 2048).unwrap();
        assert_eq!(rows[1].count, 2);
        assert_eq!(rows[1].flag, "short_suffix");
        assert!(lm_metrics("b", &[1.0], &[], 4).is_err());
        assert!(lm_metrics("b", &[1.0], &[true], 0).is_err());
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall(&["foo"], &["foo", "Bar"]).unwrap(), 0.5);
        assert_eq!(recall(&["Bar", "foo"], &["foo", "Bar"]).unwrap(), 1.0);
        assert_eq!(recall(&["foo", "foo", "foo"], &["foo", "Bar"]).unwrap(), 0.5);
        assert_eq!(recall(&["bar"], &["Bar"]).unwrap(), 0.0);
        assert!(recall::<&str, &str>(&["x"], &[]).is_err());
    }

    #[test]
    fn edit_similarity_cases() {
        assert_eq!(edit_similarity("same", "same"), 1.0);
        assert_eq!(edit_similarity("", ""), 1.0);
        assert_eq!(edit_similarity("", "abc"), 0.0);
        assert!((edit_similarity("abc", "axc") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn parse_outputs() {
        assert_eq!(parse_model_output_symbols("foo\nBar"), ["foo", "Bar"]);
        assert_eq!(parse_model_output_symbols("1. foo 2. Bar"), ["foo", "Bar"]);
        assert!(parse_model_output_symbols("").is_empty());
        assert_eq!(
            parse_model_output_symbols("- `foo()`\n* class Bar:\n3) Baz.qux"),
            ["foo", "Bar", "qux"]
        );
        assert_eq!(parse_model_output_symbols("['foo', 'Bar']"), ["foo", "Bar"]);
        assert!(parse_model_output_symbols("I could not find anything useful").is_empty());
    }

    #[test]
    fn completion_line_skips_fences_and_comments() {
        assert_eq!(completion_line("\n```python\n# next\nreturn x\nfoo()"), "return x");
        assert_eq!(completion_line("abd\nmore"), "abd");
        assert_eq!(completion_line("x = 1  # set"), "x = 1  # set");
        assert_eq!(completion_line(""), "");
    }

    #[test]
    fn report_ppl_follows_loss() {
        let report = EvalReport {
            notes: vec!["acc = greedy top-1 next-token accuracy".into()],
            rows: lm_metrics("0-128", &[0.5, 1.5], &[true, false], 1).unwrap(),
        };
        let tsv = report.to_tsv();
        assert!(tsv.starts_with("# acc"));
        assert!(tsv.contains("bucket\tscope\tcount\tloss\tppl\tacc\tflag"));
    }
}
