use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const CLS_ID: usize = 3;
pub const NUM_SPECIAL: usize = 4;

const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]"];

/// Whitespace-token vocabulary; line number in the vocabulary file is the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the non-special tokens, prepending the
    /// reserved PAD, MASK, UNK and CLS entries.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
            .collect();
        Self::from_lines(all)
    }

    fn from_lines(tokens: Vec<String>) -> Result<Self> {
        for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expected) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("vocabulary line {} must be {expected}", i + 1),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid vocabulary token {t:?}"),
                });
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate vocabulary token {t:?}"),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_lines(text.lines().map(str::to_string).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK_ID]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_tokens_are_reserved() {
        let v = Vocabulary::from_tokens(["a", "b"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("[CLS]"), CLS_ID);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK_ID);
        assert_eq!(v.encode("b  a\tq"), vec![5, 4, UNK_ID]);
    }

    #[test]
    fn file_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::from_tokens(["x", "y"]).unwrap();
        v.write(&path).unwrap();
        assert_eq!(Vocabulary::read(&path).unwrap(), v);

        std::fs::write(&path, "[MASK]\n[PAD]\n[UNK]\n[CLS]\n").unwrap();
        assert!(matches!(Vocabulary::read(&path), Err(Error::Parse { line: 1, .. })));
    }
}
