use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub index: usize,
    pub start_byte: usize,
    pub end_byte: usize,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Word/punctuation tokens: runs of identifier characters, and every other
/// non-whitespace character on its own. Used when no model tokenizer spans
/// are supplied.
pub fn tokenize(source: &str) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    let mut chars = source.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let mut end = start + c.len_utf8();
        if is_word(c) {
            while let Some(&(i, next)) = chars.peek() {
                if !is_word(next) {
                    break;
                }
                end = i + next.len_utf8();
                chars.next();
            }
        }
        spans.push(TokenSpan {
            index: spans.len(),
            start_byte: start,
            end_byte: end,
        });
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_and_punctuation() {
        let src = "def foo(a_1, b):\n    return a_1+b";
        let toks: Vec<&str> = tokenize(src).iter().map(|t| &src[t.start_byte..t.end_byte]).collect();
        assert_eq!(
            toks,
            ["def", "foo", "(", "a_1", ",", "b", ")", ":", "return", "a_1", "+", "b"]
        );
    }

    #[test]
    fn empty_and_blank() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \n\t ").is_empty());
    }

    #[test]
    fn multibyte_offsets() {
        let src = "é = 'ü'";
        let spans = tokenize(src);
        assert_eq!(spans[0].end_byte, 2);
        assert_eq!(&src[spans[3].start_byte..spans[3].end_byte], "ü");
        assert!(spans.windows(2).all(|w| w[0].end_byte <= w[1].start_byte));
    }
}
