use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::grammar::{walk, CodeGrammar, DefinitionKind};
use super::tokenize::TokenSpan;
use crate::error::{Error, Result};
use crate::hier::HierPos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Function,
    Class,
    Statement,
    FixedBlock,
    Preamble,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Function => "function",
            Self::Class => "class",
            Self::Statement => "statement",
            Self::FixedBlock => "fixed_block",
            Self::Preamble => "preamble",
        }
    }
}

/// A half-open byte range `[start_byte, end_byte)` of the file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start_byte: usize,
    pub end_byte: usize,
    pub ordinal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum SegmentationStrategy {
    FunctionLevel,
    StatementLevel,
    FixedTokens(usize),
}

impl fmt::Display for SegmentationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::FunctionLevel => f.write_str("function"),
            Self::StatementLevel => f.write_str("statement"),
            Self::FixedTokens(n) => write!(f, "fixed:{n}"),
        }
    }
}

impl FromStr for SegmentationStrategy {
    type Err = Error;

    /// `function`, `statement` or `fixed:<n>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "function" => Ok(Self::FunctionLevel),
            "statement" => Ok(Self::StatementLevel),
            _ => {
                let n = s
                    .strip_prefix("fixed:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown segmentation strategy {s:?}")))?;
                if n == 0 {
                    return Err(Error::InvalidConfig("fixed block size must be >= 1".into()));
                }
                Ok(Self::FixedTokens(n))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// The source did not parse and was kept as a single segment.
    pub fallback: bool,
}

fn check_spans(spans: &[TokenSpan], len: usize) -> Result<()> {
    for (i, s) in spans.iter().enumerate() {
        if s.start_byte > s.end_byte || s.end_byte > len {
            return Err(Error::InvalidConfig(format!(
                "token {i} span {}..{} lies outside the {len}-byte source",
                s.start_byte, s.end_byte
            )));
        }
        if i > 0 && spans[i - 1].end_byte > s.start_byte {
            return Err(Error::InvalidConfig(format!("token spans {} and {i} overlap", i - 1)));
        }
    }
    Ok(())
}

/// Splits `source` into covering, non-overlapping segments.
pub fn parse_segments(
    source: &[u8],
    strategy: SegmentationStrategy,
    token_spans: &[TokenSpan],
    grammar: &dyn CodeGrammar,
) -> Result<Segmentation> {
    let text = std::str::from_utf8(source).map_err(|e| Error::Parse(format!("source is not UTF-8: {e}")))?;
    check_spans(token_spans, source.len())?;
    let whole = |kind| vec![(0, kind)];

    let (cuts, fallback) = match strategy {
        SegmentationStrategy::FixedTokens(n) => {
            if n == 0 {
                return Err(Error::InvalidConfig("fixed block size must be >= 1".into()));
            }
            let mut cuts = whole(SegmentKind::FixedBlock);
            cuts.extend(
                token_spans
                    .iter()
                    .step_by(n)
                    .skip(1)
                    .map(|t| (t.start_byte, SegmentKind::FixedBlock)),
            );
            (cuts, false)
        }
        SegmentationStrategy::FunctionLevel | SegmentationStrategy::StatementLevel => {
            let tree = grammar.parse(text)?;
            if tree.root_node().has_error() {
                (whole(SegmentKind::Preamble), true)
            } else if strategy == SegmentationStrategy::FunctionLevel {
                (function_cuts(&tree, grammar, source.len()), false)
            } else {
                (statement_cuts(&tree, grammar), false)
            }
        }
    };
    let segments = if fallback {
        vec![Segment {
            kind: SegmentKind::Preamble,
            start_byte: 0,
            end_byte: source.len(),
            ordinal: 0,
        }]
    } else {
        close_segments(cuts, source)
    };
    Ok(Segmentation { segments, fallback })
}

fn kind_of(def: DefinitionKind) -> SegmentKind {
    match def {
        DefinitionKind::Function => SegmentKind::Function,
        DefinitionKind::Class => SegmentKind::Class,
    }
}

/// Top-level definitions become segments; text between them becomes
/// preamble segments.
fn function_cuts(tree: &tree_sitter::Tree, grammar: &dyn CodeGrammar, len: usize) -> Vec<(usize, SegmentKind)> {
    let root = tree.root_node();
    let mut cuts = vec![(0, SegmentKind::Preamble)];
    let mut cursor = root.walk();
    for child in root.named_children(&mut cursor) {
        let def = if grammar.is_definition_wrapper(&child) {
            child
                .child_by_field_name("definition")
                .and_then(|d| grammar.definition_kind(&d))
        } else {
            grammar.definition_kind(&child)
        };
        if let Some(def) = def {
            cuts.push((child.start_byte(), kind_of(def)));
            if child.end_byte() < len {
                cuts.push((child.end_byte(), SegmentKind::Preamble));
            }
        }
    }
    cuts
}

/// Every statement at any depth starts a new segment.
fn statement_cuts(tree: &tree_sitter::Tree, grammar: &dyn CodeGrammar) -> Vec<(usize, SegmentKind)> {
    let mut cuts = vec![(0, SegmentKind::Preamble)];
    walk(tree, |node| {
        if !grammar.is_statement(&node) {
            return;
        }
        let wrapped = node.parent().is_some_and(|p| grammar.is_definition_wrapper(&p));
        if wrapped {
            return;
        }
        let kind = if grammar.is_definition_wrapper(&node) {
            node.child_by_field_name("definition")
                .and_then(|d| grammar.definition_kind(&d))
                .map_or(SegmentKind::Statement, kind_of)
        } else {
            grammar.definition_kind(&node).map_or(SegmentKind::Statement, kind_of)
        };
        cuts.push((node.start_byte(), kind));
    });
    cuts
}

/// Turns cut points into contiguous segments. A later cut at the same byte
/// wins; segments holding only whitespace are folded into their
/// predecessor (or successor, at the start of the file).
fn close_segments(mut cuts: Vec<(usize, SegmentKind)>, source: &[u8]) -> Vec<Segment> {
    cuts.sort_by_key(|c| c.0);
    let mut dedup: Vec<(usize, SegmentKind)> = Vec::with_capacity(cuts.len());
    for c in cuts {
        match dedup.last_mut() {
            Some(last) if last.0 == c.0 => *last = c,
            _ => dedup.push(c),
        }
    }
    let mut raw: Vec<Segment> = dedup
        .iter()
        .enumerate()
        .map(|(i, &(start, kind))| Segment {
            kind,
            start_byte: start,
            end_byte: dedup.get(i + 1).map_or(source.len(), |c| c.0),
            ordinal: 0,
        })
        .collect();

    let blank = |s: &Segment| source[s.start_byte..s.end_byte].iter().all(u8::is_ascii_whitespace);
    let mut merged: Vec<Segment> = Vec::with_capacity(raw.len());
    let mut pending_start: Option<usize> = None;
    for mut seg in raw.drain(..) {
        if blank(&seg) {
            match merged.last_mut() {
                Some(prev) => prev.end_byte = seg.end_byte,
                None => pending_start = Some(pending_start.unwrap_or(seg.start_byte)),
            }
            continue;
        }
        if let Some(start) = pending_start.take() {
            seg.start_byte = start;
        }
        merged.push(seg);
    }
    if merged.is_empty() {
        merged.push(Segment {
            kind: SegmentKind::Preamble,
            start_byte: 0,
            end_byte: source.len(),
            ordinal: 0,
        });
    }
    for (i, s) in merged.iter_mut().enumerate() {
        s.ordinal = i;
    }
    merged
}

/// `(segment ordinal, token ordinal within segment)` for every token; the
/// token ordinal restarts at zero in each segment. A token is owned by the
/// segment containing its first byte.
pub fn assign_hier_positions(token_spans: &[TokenSpan], segments: &[Segment]) -> Result<Vec<HierPos>> {
    let mut out = Vec::with_capacity(token_spans.len());
    let mut current: Option<usize> = None;
    let mut within = 0u64;
    for (i, span) in token_spans.iter().enumerate() {
        let idx = segments.partition_point(|s| s.end_byte <= span.start_byte);
        let seg = segments
            .get(idx)
            .filter(|s| s.start_byte <= span.start_byte)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "token {i} at byte {} is not covered by any segment",
                    span.start_byte
                ))
            })?;
        if current != Some(idx) {
            current = Some(idx);
            within = 0;
        }
        out.push(HierPos::segmented(seg.ordinal as u64, within, i as u64));
        within += 1;
    }
    Ok(out)
}
