//! Character vocabulary shared by the data generator, recognizer and
//! recognition loss. Class layout: one index per character plus a trailing
//! end-of-sequence token used both as terminator and padding.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn new(charset: &str) -> Self {
        Vocab {
            chars: charset.chars().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Index of the end-of-sequence token.
    pub fn eos(&self) -> usize {
        self.chars.len()
    }

    /// Number of output classes (characters + EOS).
    pub fn classes(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, ch: char) -> Result<usize> {
        self.chars
            .iter()
            .position(|&c| c == ch)
            .ok_or(Error::UnsupportedChar {
                ch,
                code: ch as u32,
                context: "vocabulary".into(),
            })
    }

    /// Token ids padded with EOS to exactly `len` entries.
    pub fn encode_padded(&self, text: &str, len: usize) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(len);
        for ch in text.chars() {
            if out.len() >= len {
                break;
            }
            out.push(self.index_of(ch)?);
        }
        while out.len() < len {
            out.push(self.eos());
        }
        Ok(out)
    }

    /// Greedy decode: characters until the first EOS.
    pub fn decode(&self, indices: &[usize]) -> String {
        let mut s = String::new();
        for &i in indices {
            if i >= self.chars.len() {
                break;
            }
            s.push(self.chars[i]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_roundtrip() {
        let v = Vocab::new("abc");
        let ids = v.encode_padded("cab", 6).unwrap();
        assert_eq!(ids, vec![2, 0, 1, 3, 3, 3]);
        assert_eq!(v.decode(&ids), "cab");
        assert_eq!(v.classes(), 4);
    }

    #[test]
    fn out_of_vocab_is_an_error() {
        let v = Vocab::new("abc");
        let err = v.encode_padded("abz", 4).unwrap_err();
        assert!(matches!(err, Error::UnsupportedChar { ch: 'z', .. }));
    }
}
