//! Hierarchy extraction from source code: segments, hierarchical token
//! positions and defined symbols.

pub mod grammar;
pub mod segment;
pub mod symbols;
pub mod task;
pub mod tokenize;

pub use grammar::{CodeGrammar, Python};
pub use segment::{assign_hier_positions, parse_segments, Segment, SegmentKind, Segmentation, SegmentationStrategy};
pub use symbols::{extract_symbol_sites, extract_symbols, SymbolKind, SymbolSet, SymbolSite};
pub use task::{build_symbol_task, corpus_stats, load_corpus, CorpusStats, PromptTemplate, SourceFile, StatsRow};
pub use tokenize::{tokenize, TokenSpan};
