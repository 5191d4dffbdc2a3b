//! The single parsing interface behind syntax-aware segmentation and symbol
//! extraction.

use tree_sitter::{Language, Node, Parser, Tree};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefinitionKind {
    Function,
    Class,
}

/// A tree-sitter grammar plus the node kinds that matter for hierarchy
/// extraction.
pub trait CodeGrammar: Send + Sync {
    fn name(&self) -> &'static str;
    fn language(&self) -> Language;
    /// Function or class definition node kinds.
    fn definition_kind(&self, node: &Node) -> Option<DefinitionKind>;
    /// Node that wraps a definition without being one (decorators).
    fn is_definition_wrapper(&self, node: &Node) -> bool;
    fn is_statement(&self, node: &Node) -> bool;
    fn definition_name<'a>(&self, node: &Node<'a>) -> Option<Node<'a>> {
        node.child_by_field_name("name")
    }

    fn parse(&self, source: &str) -> Result<Tree> {
        let mut parser = Parser::new();
        parser
            .set_language(&self.language())
            .map_err(|e| Error::Parse(format!("{} grammar: {e}", self.name())))?;
        parser
            .parse(source, None)
            .ok_or_else(|| Error::Parse("parser returned no tree".into()))
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Python;

impl CodeGrammar for Python {
    fn name(&self) -> &'static str {
        "python"
    }

    fn language(&self) -> Language {
        tree_sitter_python::LANGUAGE.into()
    }

    fn definition_kind(&self, node: &Node) -> Option<DefinitionKind> {
        match node.kind() {
            "function_definition" => Some(DefinitionKind::Function),
            "class_definition" => Some(DefinitionKind::Class),
            _ => None,
        }
    }

    fn is_definition_wrapper(&self, node: &Node) -> bool {
        node.kind() == "decorated_definition"
    }

    fn is_statement(&self, node: &Node) -> bool {
        node.kind().ends_with("_statement") || self.definition_kind(node).is_some() || self.is_definition_wrapper(node)
    }
}

/// Pre-order walk over every node of `tree`.
pub(crate) fn walk(tree: &Tree, mut visit: impl FnMut(Node)) {
    let mut cursor = tree.walk();
    loop {
        visit(cursor.node());
        if cursor.goto_first_child() {
            continue;
        }
        loop {
            if cursor.goto_next_sibling() {
                break;
            }
            if !cursor.goto_parent() {
                return;
            }
        }
    }
}
