use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::{InputBuilder, TokenizedInput, Tokenizer};
use crate::corpus::Instance;
use crate::error::{Error, Result};

/// How much surrounding text the encoder sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ContextMode {
    /// The current sentence alone.
    #[serde(rename = "1sent")]
    OneSent,
    /// The current sentence plus one neighbor sentence on each side.
    #[serde(rename = "1sent+1sur")]
    OneSentOneSur,
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContextMode::OneSent => "1sent",
            ContextMode::OneSentOneSur => "1sent+1sur",
        })
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1sent" => Ok(ContextMode::OneSent),
            "1sent+1sur" => Ok(ContextMode::OneSentOneSur),
            other => Err(Error::invalid(format!(
                "unknown context mode `{other}` (expected 1sent or 1sent+1sur)"
            ))),
        }
    }
}

pub fn build_context(
    instance: &Instance,
    mode: ContextMode,
    tokenizer: &Tokenizer,
    max_positions: usize,
) -> Result<TokenizedInput> {
    build_context_from_parts(
        &instance.words,
        instance.target_index,
        instance.left.as_deref(),
        instance.right.as_deref(),
        mode,
        tokenizer,
        max_positions,
    )
}

/// Frames a sentence for the encoder.
///
/// `1sent` gives `[CLS] current [SEP]` with segment 0 throughout.
/// `1sent+1sur` gives `[CLS] left [SEP] current [SEP] right [SEP]` where the
/// current sentence and its `[SEP]` carry segment 1 and everything else
/// segment 0. Missing or empty neighbors are dropped together with their
/// `[SEP]`. When the framed input exceeds `max_positions`, words are removed
/// from the far end of the left neighbor first, then from the far end of the
/// right neighbor; the current sentence is never truncated.
pub fn build_context_from_parts<S: AsRef<str>>(
    current: &[S],
    target_index: usize,
    left: Option<&[S]>,
    right: Option<&[S]>,
    mode: ContextMode,
    tokenizer: &Tokenizer,
    max_positions: usize,
) -> Result<TokenizedInput> {
    if current.is_empty() {
        return Err(Error::Empty("current sentence has no words".into()));
    }
    if target_index >= current.len() {
        return Err(Error::invalid(format!(
            "target index {target_index} out of range for a {}-word sentence",
            current.len()
        )));
    }
    let split = |words: &[S]| -> Vec<Vec<u32>> {
        words.iter().map(|w| tokenizer.word_pieces(w.as_ref())).collect()
    };
    let cur = split(current);
    let cur_len: usize = cur.iter().map(Vec::len).sum::<usize>() + 2;
    if cur_len > max_positions {
        return Err(Error::Overlong {
            pieces: cur_len,
            max: max_positions,
            excess: cur_len - max_positions,
        });
    }

    let (mut left_words, mut right_words) = match mode {
        ContextMode::OneSent => (Vec::new(), Vec::new()),
        ContextMode::OneSentOneSur => (
            left.map(split).unwrap_or_default(),
            right.map(split).unwrap_or_default(),
        ),
    };
    let framed = |ws: &[Vec<u32>]| -> usize {
        if ws.is_empty() {
            0
        } else {
            ws.iter().map(Vec::len).sum::<usize>() + 1
        }
    };
    // left first, dropping its earliest words
    let mut left_skip = 0;
    while cur_len + framed(&left_words[left_skip..]) + framed(&right_words) > max_positions
        && left_skip < left_words.len()
    {
        left_skip += 1;
    }
    left_words.drain(..left_skip);
    while cur_len + framed(&left_words) + framed(&right_words) > max_positions {
        right_words.pop();
    }

    let vocab = tokenizer.vocab();
    let mut b = InputBuilder::default();
    if mode == ContextMode::OneSent || (left_words.is_empty() && right_words.is_empty()) {
        b.special(vocab.cls_id(), 0);
        for w in &cur {
            b.word(w, 0);
        }
        b.special(vocab.sep_id(), 0);
        return Ok(b.finish(0..cur.len()));
    }

    b.special(vocab.cls_id(), 0);
    if !left_words.is_empty() {
        for w in &left_words {
            b.word(w, 0);
        }
        b.special(vocab.sep_id(), 0);
    }
    let focus_start = b.word_count();
    for w in &cur {
        b.word(w, 1);
    }
    b.special(vocab.sep_id(), 1);
    let focus = focus_start..b.word_count();
    if !right_words.is_empty() {
        for w in &right_words {
            b.word(w, 0);
        }
        b.special(vocab.sep_id(), 0);
    }
    Ok(b.finish(focus))
}
