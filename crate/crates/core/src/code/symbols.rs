use serde::{Deserialize, Serialize};

use super::grammar::{walk, CodeGrammar, DefinitionKind};
use crate::error::{Error, Result};

/// One definition occurrence. `start_byte` is where the `def`/`class`
/// statement begins (decorators excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSite {
    pub name: String,
    pub kind: SymbolKind,
    pub start_byte: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolKind {
    Function,
    Class,
}

/// Defined function and class names in file order, first occurrence wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolSet(Vec<String>);

impl SymbolSet {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for n in names {
            let n = n.into();
            if !n.is_empty() && !out.contains(&n) {
                out.push(n);
            }
        }
        Self(out)
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.iter().any(|n| n == name)
    }
}

/// Every function/class definition at any nesting depth, in file order.
/// Gold extraction must be exact, so a source with syntax errors is an
/// error here rather than a best-effort result.
pub fn extract_symbol_sites(source: &str, grammar: &dyn CodeGrammar) -> Result<Vec<SymbolSite>> {
    let tree = grammar.parse(source)?;
    if tree.root_node().has_error() {
        return Err(Error::Parse(format!("{} source has syntax errors", grammar.name())));
    }
    let mut sites = Vec::new();
    walk(&tree, |node| {
        let Some(def) = grammar.definition_kind(&node) else {
            return;
        };
        if let Some(name) = grammar.definition_name(&node) {
            sites.push(SymbolSite {
                name: source[name.byte_range()].to_string(),
                kind: match def {
                    DefinitionKind::Function => SymbolKind::Function,
                    DefinitionKind::Class => SymbolKind::Class,
                },
                start_byte: node.start_byte(),
            });
        }
    });
    Ok(sites)
}

pub fn extract_symbols(source: &str, grammar: &dyn CodeGrammar) -> Result<SymbolSet> {
    let sites = extract_symbol_sites(source, grammar)?;
    Ok(SymbolSet::from_names(sites.into_iter().map(|s| s.name)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::grammar::Python;

    #[test]
    fn function_and_class() {
        let src = "def foo():\n    pass\n\nclass Bar:\n    pass\n";
        assert_eq!(extract_symbols(src, &Python).unwrap().names(), ["foo", "Bar"]);
    }

    #[test]
    fn no_definitions() {
        assert!(extract_symbols("x = 1\nprint(x)\n", &Python).unwrap().is_empty());
        assert!(extract_symbols("", &Python).unwrap().is_empty());
    }

    #[test]
    fn nested_async_and_decorated() {
        let src = "\
@decorator
class Outer:
    def method(self):
        def inner():
            return 1
        return inner

async def fetch():
    pass

def method():
    pass
";
        let sites = extract_symbol_sites(src, &Python).unwrap();
        let names: Vec<_> = sites.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Outer", "method", "inner", "fetch", "method"]);
        assert_eq!(sites[0].start_byte, src.find("class").unwrap());
        assert_eq!(sites[3].start_byte, src.find("async").unwrap());
        assert_eq!(
            extract_symbols(src, &Python).unwrap().names(),
            ["Outer", "method", "inner", "fetch"]
        );
    }

    #[test]
    fn syntax_error_is_an_error() {
        assert!(matches!(extract_symbols("def (:\n", &Python), Err(Error::Parse(_))));
    }

    #[test]
    fn set_dedups_and_drops_empty() {
        let s = SymbolSet::from_names(["a", "b", "a", ""]);
        assert_eq!(s.names(), ["a", "b"]);
    }
}
