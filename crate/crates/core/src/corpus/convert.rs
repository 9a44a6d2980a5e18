//! One-way converters from benchmark XML layouts into [`Instance`]s.

use std::collections::HashMap;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{Instance, Lexelt};
use crate::error::{Error, Result};

/// Instance id to gold senses.
pub type KeyMap = HashMap<String, Vec<String>>;

/// Reads a gold key file. Lines are `instance-id sense...` (all-words
/// style) or `lexelt instance-id sense...` (lexical-sample style); the
/// latter is detected by an instance id in column 1 that starts with the
/// lemma of the lexelt in column 0, so both layouts can be passed here.
pub fn read_key_file(path: &Path) -> Result<KeyMap> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let rows: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>())
        .filter(|r| !r.is_empty())
        .collect();
    for (n, r) in rows.iter().enumerate() {
        if r.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: "key line needs an instance id and at least one sense".into(),
            });
        }
    }
    // Lexical-sample keys repeat the lexelt in column 0 and put the id in
    // column 1. Ids start with the lemma (`art.n art.40001`) and sometimes
    // the whole lexelt (`art.n art.n.1`).
    let lemma = |lx: &str| lx.rsplit_once('.').map_or(lx, |(l, _)| l).to_string();
    let lexical = !rows.is_empty()
        && rows.iter().all(|r| r.len() >= 3 && r[1].starts_with(&format!("{}.", lemma(r[0]))));
    let skip = usize::from(lexical);
    Ok(rows
        .into_iter()
        .map(|r| (r[skip].to_string(), r[skip + 1..].iter().map(|s| s.to_string()).collect()))
        .collect())
}

fn xml_error(path: &Path, text: &str, pos: u64, message: impl std::fmt::Display) -> Error {
    let pos = (pos as usize).min(text.len());
    let line = text.as_bytes()[..pos].iter().filter(|&&b| b == b'\n').count() + 1;
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("malformed XML: {message}"),
    }
}

fn attr(e: &BytesStart, name: &str) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.as_ref() == name.as_bytes())
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

fn is_sentence_end(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Splits a token stream into sentences at `.`, `!`, `?` tokens.
fn sentence_bounds(tokens: &[String]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if is_sentence_end(t) {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(start..tokens.len());
    }
    out
}

fn split_lexelt_item(item: &str) -> Lexelt {
    match item.rsplit_once('.') {
        Some((lemma, pos)) if !lemma.is_empty() && !pos.is_empty() => Lexelt::new(lemma, Some(pos)),
        _ => Lexelt::new(item, None),
    }
}

/// Senseval English lexical-sample XML:
/// `<lexelt item="art.n"><instance id=".."><answer senseid=".."/>
/// <context>... <head>art</head> ...</context></instance></lexelt>`.
///
/// The context is whitespace-tokenized and split into sentences; the
/// sentence holding `<head>` becomes the current sentence and its
/// neighbors the left/right context.
pub fn parse_senseval_lexical_sample(text: &str, path: &Path, key: Option<&KeyMap>) -> Result<Vec<Instance>> {
    let mut reader = Reader::from_str(text);
    let mut out = Vec::new();

    let mut lexelt: Option<Lexelt> = None;
    let mut id: Option<String> = None;
    let mut answers: Vec<String> = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut head: Option<usize> = None;
    let (mut in_context, mut in_head) = (false, false);

    loop {
        let event = reader
            .read_event()
            .map_err(|e| xml_error(path, text, reader.error_position(), e))?;
        match event {
            Event::Start(e) | Event::Empty(e) if e.name().as_ref() == b"answer" => {
                if let Some(s) = attr(&e, "senseid") {
                    if !answers.contains(&s) {
                        answers.push(s);
                    }
                }
            }
            Event::Start(e) => match e.name().as_ref() {
                b"lexelt" => {
                    let item = attr(&e, "item").ok_or_else(|| {
                        xml_error(path, text, reader.buffer_position(), "lexelt without item")
                    })?;
                    lexelt = Some(split_lexelt_item(&item));
                }
                b"instance" => {
                    id = Some(attr(&e, "id").ok_or_else(|| {
                        xml_error(path, text, reader.buffer_position(), "instance without id")
                    })?);
                    answers.clear();
                    tokens.clear();
                    head = None;
                }
                b"context" => in_context = true,
                b"head" if in_context => in_head = true,
                _ => {}
            },
            Event::Text(t) if in_context => {
                let s = t
                    .unescape()
                    .map_err(|e| xml_error(path, text, reader.buffer_position(), e))?;
                let before = tokens.len();
                tokens.extend(s.split_whitespace().map(str::to_string));
                if in_head && head.is_none() && tokens.len() > before {
                    head = Some(before);
                }
            }
            Event::End(e) => match e.name().as_ref() {
                b"head" => in_head = false,
                b"context" => in_context = false,
                b"instance" => {
                    let pos = reader.buffer_position();
                    let inst_id = id.take().unwrap_or_default();
                    let lx = lexelt.clone().ok_or_else(|| {
                        xml_error(path, text, pos, "instance outside a lexelt")
                    })?;
                    let h = head.ok_or_else(|| {
                        xml_error(path, text, pos, format!("instance {inst_id} has no <head>"))
                    })?;
                    let gold = if answers.is_empty() {
                        key.and_then(|k| k.get(&inst_id)).cloned().unwrap_or_default()
                    } else {
                        answers.clone()
                    };
                    let bounds = sentence_bounds(&tokens);
                    let si = bounds.iter().position(|r| r.contains(&h)).expect("head inside tokens");
                    let slice = |i: usize| tokens[bounds[i].clone()].to_vec();
                    out.push(Instance {
                        words: slice(si),
                        target_index: h - bounds[si].start,
                        left: si.checked_sub(1).map(slice),
                        right: (si + 1 < bounds.len()).then(|| slice(si + 1)),
                        lexelt: lx,
                        gold_senses: gold,
                        genre: None,
                        sentence: Some(inst_id.clone()),
                        id: inst_id,
                    });
                }
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    Ok(out)
}

fn map_universal_pos(pos: &str) -> String {
    match pos {
        "NOUN" => "n".into(),
        "VERB" => "v".into(),
        "ADJ" => "a".into(),
        "ADV" => "r".into(),
        other => other.to_lowercase(),
    }
}

struct PendingTarget {
    id: String,
    index: usize,
    lexelt: Lexelt,
}

struct Sentence {
    id: String,
    words: Vec<String>,
    targets: Vec<PendingTarget>,
}

/// Unified all-words XML: `<corpus><text id><sentence id>` with `<wf>` and
/// `<instance id lemma pos>` word elements. Lexelts are `lemma` plus the
/// POS mapped to WordNet letters (NOUN→n, VERB→v, ADJ→a, ADV→r).
pub fn parse_unified_all_words(text: &str, path: &Path, key: Option<&KeyMap>) -> Result<Vec<Instance>> {
    let mut reader = Reader::from_str(text);
    let mut out = Vec::new();
    let mut doc: Vec<Sentence> = Vec::new();
    let mut current: Option<Sentence> = None;
    let mut word: Option<Option<(String, Lexelt)>> = None;
    let mut word_text = String::new();

    let flush_doc = |doc: &mut Vec<Sentence>, out: &mut Vec<Instance>| {
        for (si, s) in doc.iter().enumerate() {
            for t in &s.targets {
                out.push(Instance {
                    id: t.id.clone(),
                    words: s.words.clone(),
                    target_index: t.index,
                    lexelt: t.lexelt.clone(),
                    gold_senses: key.and_then(|k| k.get(&t.id)).cloned().unwrap_or_default(),
                    left: si.checked_sub(1).map(|p| doc[p].words.clone()),
                    right: doc.get(si + 1).map(|n| n.words.clone()),
                    genre: None,
                    sentence: Some(s.id.clone()),
                });
            }
        }
        doc.clear();
    };

    loop {
        let event = reader
            .read_event()
            .map_err(|e| xml_error(path, text, reader.error_position(), e))?;
        match event {
            Event::Start(e) => match e.name().as_ref() {
                b"sentence" => {
                    current = Some(Sentence {
                        id: attr(&e, "id").unwrap_or_default(),
                        words: Vec::new(),
                        targets: Vec::new(),
                    });
                }
                b"wf" => {
                    word = Some(None);
                    word_text.clear();
                }
                b"instance" => {
                    let pos = reader.buffer_position();
                    let id = attr(&e, "id")
                        .ok_or_else(|| xml_error(path, text, pos, "instance without id"))?;
                    let lemma = attr(&e, "lemma")
                        .ok_or_else(|| xml_error(path, text, pos, "instance without lemma"))?;
                    let p = attr(&e, "pos").map(|p| map_universal_pos(&p));
                    word = Some(Some((id, Lexelt { lemma, pos: p })));
                    word_text.clear();
                }
                _ => {}
            },
            Event::Text(t) if word.is_some() => {
                let s = t
                    .unescape()
                    .map_err(|e| xml_error(path, text, reader.buffer_position(), e))?;
                word_text.push_str(&s);
            }
            Event::End(e) => match e.name().as_ref() {
                b"wf" | b"instance" => {
                    let pos = reader.buffer_position();
                    let sentence = current
                        .as_mut()
                        .ok_or_else(|| xml_error(path, text, pos, "word outside a sentence"))?;
                    let surface = word_text.split_whitespace().collect::<Vec<_>>().join("_");
                    if let Some(Some((id, lexelt))) = word.take() {
                        sentence.targets.push(PendingTarget {
                            id,
                            index: sentence.words.len(),
                            lexelt,
                        });
                    }
                    sentence.words.push(surface);
                }
                b"sentence" => {
                    if let Some(s) = current.take() {
                        if !s.words.is_empty() {
                            doc.push(s);
                        }
                    }
                }
                b"text" => flush_doc(&mut doc, &mut out),
                _ => {}
            },
            Event::Eof => break,
            _ => {}
        }
    }
    flush_doc(&mut doc, &mut out);
    Ok(out)
}
