use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

/// Subword vocabulary; piece id is the zero-based line number.
#[derive(Clone, Debug)]
pub struct Vocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    unk: u32,
    cls: u32,
    sep: u32,
}

impl Vocab {
    pub fn from_pieces<I, S>(pieces: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pieces: Vec<String> = pieces.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            // first occurrence wins for duplicated lines
            index.entry(p.clone()).or_insert(i as u32);
        }
        let find = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::invalid(format!("vocabulary lacks the {s} piece")))
        };
        let (unk, cls, sep) = (find(UNK)?, find(CLS)?, find(SEP)?);
        Ok(Self {
            pieces,
            index,
            unk,
            cls,
            sep,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pieces(text.lines().map(|l| l.trim_end_matches('\r')))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn cls_id(&self) -> u32 {
        self.cls
    }

    pub fn sep_id(&self) -> u32 {
        self.sep
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }
}

/// Piece-level encoder input with its word alignment.
///
/// `word_spans` covers every non-special piece, in order. `focus` is the
/// range of word indices that belong to the sentence being disambiguated;
/// the encoder returns hidden states only for those words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedInput {
    pub pieces: Vec<u32>,
    pub segments: Vec<u8>,
    pub word_spans: Vec<Range<usize>>,
    pub specials: Vec<usize>,
    pub focus: Range<usize>,
}

impl TokenizedInput {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Piece span of the `i`-th word of the focus sentence.
    pub fn focus_span(&self, i: usize) -> Option<Range<usize>> {
        let w = self.focus.start + i;
        if w < self.focus.end {
            Some(self.word_spans[w].clone())
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.len() != self.segments.len() {
            return Err(Error::shape("pieces and segment ids differ in length"));
        }
        if self.segments.iter().any(|&s| s > 1) {
            return Err(Error::invalid("segment ids must be 0 or 1"));
        }
        if self.focus.end > self.word_spans.len() || self.focus.is_empty() {
            return Err(Error::invalid("focus sentence range is empty or out of bounds"));
        }
        let mut owner = vec![0u8; self.pieces.len()];
        for &s in &self.specials {
            if s >= owner.len() {
                return Err(Error::invalid("special token position out of range"));
            }
            owner[s] = 1;
        }
        let mut last_end = 0;
        for span in &self.word_spans {
            if span.is_empty() || span.start < last_end || span.end > owner.len() {
                return Err(Error::invalid("word spans must be non-empty, ordered, disjoint"));
            }
            for o in &mut owner[span.clone()] {
                if *o != 0 {
                    return Err(Error::invalid("word span overlaps a special token"));
                }
                *o = 2;
            }
            last_end = span.end;
        }
        if owner.contains(&0) {
            return Err(Error::invalid("piece not covered by any word span"));
        }
        Ok(())
    }
}

/// Greedy longest-match-first subword tokenizer.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: Vocab,
    lowercase: bool,
}

impl Tokenizer {
    pub fn new(vocab: Vocab, lowercase: bool) -> Self {
        Self { vocab, lowercase }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Splits one word into piece ids. A word with no full decomposition
    /// becomes a single unknown piece.
    pub fn word_pieces(&self, word: &str) -> Vec<u32> {
        let word = if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        };
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return vec![self.vocab.unk];
        }
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, CONTINUATION);
                }
                if let Some(id) = self.vocab.id(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => return vec![self.vocab.unk],
            }
        }
        out
    }

    /// Tokenizes a single sentence framed as `[CLS] words [SEP]`.
    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> Result<TokenizedInput> {
        if words.is_empty() {
            return Err(Error::Empty("cannot tokenize an empty word sequence".into()));
        }
        let mut b = InputBuilder::default();
        b.special(self.vocab.cls, 0);
        for w in words {
            b.word(&self.word_pieces(w.as_ref()), 0);
        }
        b.special(self.vocab.sep, 0);
        Ok(b.finish(0..words.len()))
    }
}

#[derive(Default)]
pub(crate) struct InputBuilder {
    pieces: Vec<u32>,
    segments: Vec<u8>,
    word_spans: Vec<Range<usize>>,
    specials: Vec<usize>,
}

impl InputBuilder {
    pub(crate) fn special(&mut self, id: u32, segment: u8) {
        self.specials.push(self.pieces.len());
        self.pieces.push(id);
        self.segments.push(segment);
    }

    pub(crate) fn word(&mut self, pieces: &[u32], segment: u8) {
        let start = self.pieces.len();
        self.pieces.extend_from_slice(pieces);
        self.segments.extend(std::iter::repeat_n(segment, pieces.len()));
        self.word_spans.push(start..self.pieces.len());
    }

    pub(crate) fn word_count(&self) -> usize {
        self.word_spans.len()
    }

    pub(crate) fn finish(self, focus: Range<usize>) -> TokenizedInput {
        TokenizedInput {
            pieces: self.pieces,
            segments: self.segments,
            word_spans: self.word_spans,
            specials: self.specials,
            focus,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Tokenizer {
        let vocab =
            Vocab::from_pieces(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "play", "##ing", "bank", "p"])
                .unwrap();
        Tokenizer::new(vocab, true)
    }

    #[test]
    fn whole_word_piece() {
        let t = toy();
        let input = t.tokenize(&["bank"]).unwrap();
        assert_eq!(input.pieces, vec![2, 6, 3]);
        assert_eq!(input.word_spans, vec![1..2]);
        input.validate().unwrap();
    }

    #[test]
    fn unknown_word_is_single_unk() {
        let t = toy();
        assert_eq!(t.word_pieces("zebra"), vec![1]);
        let input = t.tokenize(&["zebra"]).unwrap();
        assert_eq!(input.word_spans, vec![1..2]);
    }

    #[test]
    fn greedy_longest_match() {
        let t = toy();
        // "p" is a prefix too, but the longest match "play" wins
        assert_eq!(t.word_pieces("playing"), vec![4, 5]);
        assert_eq!(t.word_pieces("PLAYING"), vec![4, 5]);
        let input = t.tokenize(&["bank", "playing"]).unwrap();
        assert_eq!(input.word_spans, vec![1..2, 2..4]);
        assert_eq!(input.specials, vec![0, 4]);
        input.validate().unwrap();
    }

    #[test]
    fn partial_decomposition_falls_back_to_unk() {
        let t = toy();
        assert_eq!(t.word_pieces("playx"), vec![1]);
    }

    #[test]
    fn case_preserved_when_lowercasing_off() {
        let vocab = Vocab::from_pieces(["[UNK]", "[CLS]", "[SEP]", "bank"]).unwrap();
        let t = Tokenizer::new(vocab, false);
        assert_eq!(t.word_pieces("Bank"), vec![0]);
    }

    #[test]
    fn empty_input_rejected() {
        let words: [&str; 0] = [];
        assert!(matches!(toy().tokenize(&words), Err(Error::Empty(_))));
    }

    #[test]
    fn vocab_requires_specials() {
        assert!(Vocab::from_pieces(["a", "b"]).is_err());
    }
}
