//! Code Symbol Understanding task construction and corpus statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use walkdir::WalkDir;

use super::grammar::CodeGrammar;
use super::symbols::extract_symbol_sites;
use super::tokenize::tokenize;
use super::SymbolSet;
use crate::error::{Error, Result};
use crate::record::{TaskKind, TaskRecord};

pub const INPUT_SLOT: &str = "{input_code}";

/// Paraphrase of the published task prompt; the original wording is only
/// available as a figure.
pub const DEFAULT_TEMPLATE: &str = "\
Below is a long source code file.

{input_code}

Read the code above and list the name of every function and every class \
defined in it, including methods and nested definitions. \
Output one name per line and nothing else.
";

pub const DEFAULT_TEMPLATE_ID: &str = "symbol-paraphrase-v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    text: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if !text.contains(INPUT_SLOT) {
            return Err(Error::MalformedTask(format!("template has no {INPUT_SLOT} slot")));
        }
        Ok(Self { id: id.into(), text })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn render(&self, code: &str) -> String {
        self.text.replace(INPUT_SLOT, code)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE_ID, DEFAULT_TEMPLATE).expect("default template has a slot")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub repo: String,
    /// Path relative to the repository directory, `/`-separated.
    pub path: String,
    pub source: String,
}

/// Loads `root/<repo>/**/*.py`, repositories and files in name order.
/// Files directly under `root` belong to the repository `.`.
pub fn load_corpus(root: &Path, extension: &str) -> Result<Vec<SourceFile>> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() || entry.path().extension().is_none_or(|e| e != extension) {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("walk stays under root");
        let mut parts: Vec<String> = rel.iter().map(|p| p.to_string_lossy().into_owned()).collect();
        let (repo, path) = if parts.len() > 1 {
            let repo = parts.remove(0);
            (repo, parts.join("/"))
        } else {
            (".".to_string(), parts.join("/"))
        };
        files.push(SourceFile {
            repo,
            path,
            source: std::fs::read_to_string(entry.path())?,
        });
    }
    Ok(files)
}

pub fn build_symbol_task(
    file: &SourceFile,
    template: &PromptTemplate,
    grammar: &dyn CodeGrammar,
) -> Result<TaskRecord> {
    let gold = SymbolSet::from_names(extract_symbol_sites(&file.source, grammar)?.into_iter().map(|s| s.name));
    Ok(TaskRecord {
        id: format!("{}/{}", file.repo, file.path),
        kind: TaskKind::Symbol,
        prompt: template.render(&file.source),
        gold_symbols: Some(gold.names().to_vec()),
        gold_next_line: None,
        token_length: tokenize(&file.source).len() as u64,
        repo: file.repo.clone(),
        path: file.path.clone(),
        template: Some(template.id().to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub repo: String,
    pub files: usize,
    /// Mean file length in word/punctuation tokens.
    pub mean_length: f64,
    pub mean_symbols: f64,
    /// Byte offset of the earliest definition across the group's files.
    pub min_symbol_loc: Option<usize>,
    pub max_symbol_loc: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub repos: Vec<StatsRow>,
    pub total: StatsRow,
}

#[derive(Default)]
struct Acc {
    files: usize,
    length: u64,
    symbols: u64,
    min_loc: Option<usize>,
    max_loc: Option<usize>,
}

impl Acc {
    fn add(&mut self, length: u64, symbols: u64, min_loc: Option<usize>, max_loc: Option<usize>) {
        self.files += 1;
        self.length += length;
        self.symbols += symbols;
        self.min_loc = match (self.min_loc, min_loc) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.max_loc = self.max_loc.max(max_loc);
    }

    fn row(&self, repo: String) -> StatsRow {
        StatsRow {
            repo,
            files: self.files,
            mean_length: self.length as f64 / self.files as f64,
            mean_symbols: self.symbols as f64 / self.files as f64,
            min_symbol_loc: self.min_loc,
            max_symbol_loc: self.max_loc,
        }
    }
}

/// Per-repository and overall file counts, mean lengths, mean symbol counts
/// and the extreme definition locations.
pub fn corpus_stats(files: &[SourceFile], grammar: &dyn CodeGrammar) -> Result<CorpusStats> {
    if files.is_empty() {
        return Err(Error::InvalidConfig("corpus statistics need at least one file".into()));
    }
    let mut by_repo: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    for f in files {
        let sites = extract_symbol_sites(&f.source, grammar)?;
        let length = tokenize(&f.source).len() as u64;
        let symbols = SymbolSet::from_names(sites.iter().map(|s| s.name.as_str())).len() as u64;
        let min_loc = sites.iter().map(|s| s.start_byte).min();
        let max_loc = sites.iter().map(|s| s.start_byte).max();
        by_repo
            .entry(&f.repo)
            .or_default()
            .add(length, symbols, min_loc, max_loc);
        total.add(length, symbols, min_loc, max_loc);
    }
    Ok(CorpusStats {
        repos: by_repo.iter().map(|(repo, acc)| acc.row(repo.to_string())).collect(),
        total: total.row("TOTAL".into()),
    })
}

impl CorpusStats {
    /// Tab-separated table, one row per repository plus a `TOTAL` row.
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("repo\tfiles\tmean_length_tokens\tmean_symbols\tmin_symbol_loc_bytes\tmax_symbol_loc_bytes\n");
        let loc = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        for r in self.repos.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.repo,
                r.files,
                r.mean_length,
                r.mean_symbols,
                loc(r.min_symbol_loc),
                loc(r.max_symbol_loc)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::grammar::Python;

    fn file(repo: &str, path: &str, source: &str) -> SourceFile {
        SourceFile {
            repo: repo.into(),
            path: path.into(),
            source: source.into(),
        }
    }

    #[test]
    fn template_needs_slot() {
        assert!(PromptTemplate::new("t", "no slot here").is_err());
        let t = PromptTemplate::new("t", "<<{input_code}>>").unwrap();
        assert_eq!(t.render("x"), "<<x>>");
    }

    #[test]
    fn record_from_file() {
        let f = file("r", "m.py", "def foo():\n    pass\nclass Bar:\n    pass\n");
        let rec = build_symbol_task(&f, &PromptTemplate::default(), &Python).unwrap();
        assert_eq!(rec.gold_symbols.as_deref().unwrap(), ["foo", "Bar"]);
        assert!(rec.prompt.contains("class Bar:"));
        assert_eq!(rec.token_length, 10);
        assert_eq!(rec.id, "r/m.py");
        rec.validate().unwrap();
    }

    #[test]
    fn stats_single_file() {
        let src = "def foo():\n    pass\n\nclass Bar:\n    pass\n";
        let stats = corpus_stats(&[file("r", "a.py", src)], &Python).unwrap();
        assert_eq!(stats.total.files, 1);
        assert_eq!(stats.total.mean_length, 10.0);
        assert_eq!(stats.total.mean_symbols, 2.0);
        assert_eq!(stats.total.min_symbol_loc, Some(0));
        assert_eq!(stats.total.max_symbol_loc, Some(src.find("class").unwrap()));
    }

    #[test]
    fn stats_average_over_files() {
        let files = [file("a", "1.py", "def f():\n    pass\n"), file("b", "2.py", "x = 1\n")];
        let stats = corpus_stats(&files, &Python).unwrap();
        assert_eq!(stats.repos.len(), 2);
        assert_eq!(stats.total.mean_length, (6.0 + 3.0) / 2.0);
        assert_eq!(stats.total.mean_symbols, 0.5);
        assert_eq!(stats.repos[1].min_symbol_loc, None);
        assert!(stats.to_tsv().lines().nth(2).unwrap().ends_with("\t-\t-"));
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(corpus_stats(&[], &Python).is_err());
    }
}
