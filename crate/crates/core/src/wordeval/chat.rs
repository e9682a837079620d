//! CHAT transcript parsing.
//!
//! Handles the subset of CHAT that clinical stuttering annotation needs:
//! `@`-headers, `*SPK:` main tiers (with tab-indented continuations),
//! `%`-dependent tiers, and word-attached disfluency codes. Stutter codes
//! ride on words as `[* code]` postfix brackets with a configurable
//! code-to-category map; a few CHAT conventions are also recognized inline
//! (`&-uh` fillers, `&+s` phonological fragments, `[/]` retracing).

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChatParseError {
    #[error("line {line}: malformed tier: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: unterminated `[` group")]
    UnterminatedBracket { line: usize },
}

/// The five clinical stutter categories. Any word whose codes intersect this
/// set is a stuttered word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StutterCode {
    Prolongation,
    Epenthesis,
    BrokenWord,
    Block,
    SoundSyllableRepetition,
}

impl StutterCode {
    pub const ALL: [StutterCode; 5] = [
        StutterCode::Prolongation,
        StutterCode::Epenthesis,
        StutterCode::BrokenWord,
        StutterCode::Block,
        StutterCode::SoundSyllableRepetition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StutterCode::Prolongation => "prolongation",
            StutterCode::Epenthesis => "epenthesis",
            StutterCode::BrokenWord => "broken_word",
            StutterCode::Block => "block",
            StutterCode::SoundSyllableRepetition => "sound_syllable_repetition",
        }
    }
}

/// Any annotation attached to a word. Non-stutter codes are preserved but
/// stay distinguishable from the stutter inventory.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WordCode {
    Stutter(StutterCode),
    /// Typical (non-stutter) disfluency: filler, retrace, revision.
    Typical(&'static str),
    /// Unknown bracket code, retained verbatim.
    Opaque(String),
}

/// Maps `[* code]` strings to stutter categories. The five categories are
/// fixed; the strings naming them are configurable.
#[derive(Debug, Clone)]
pub struct CodeMap {
    map: BTreeMap<String, StutterCode>,
}

impl Default for CodeMap {
    fn default() -> Self {
        let mut map = BTreeMap::new();
        map.insert("pro".into(), StutterCode::Prolongation);
        map.insert("epen".into(), StutterCode::Epenthesis);
        map.insert("bw".into(), StutterCode::BrokenWord);
        map.insert("blk".into(), StutterCode::Block);
        map.insert("sr".into(), StutterCode::SoundSyllableRepetition);
        Self { map }
    }
}

impl CodeMap {
    pub fn with_entries(entries: impl IntoIterator<Item = (String, StutterCode)>) -> Self {
        Self { map: entries.into_iter().collect() }
    }

    pub fn lookup(&self, code: &str) -> Option<StutterCode> {
        self.map.get(code).copied()
    }
}

/// One transcribed word with its attached annotation codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatWord {
    pub surface: String,
    pub codes: Vec<WordCode>,
}

impl ChatWord {
    pub fn stutter_codes(&self) -> Vec<StutterCode> {
        self.codes
            .iter()
            .filter_map(|c| match c {
                WordCode::Stutter(s) => Some(*s),
                _ => None,
            })
            .collect()
    }

    pub fn is_stuttered(&self) -> bool {
        !self.stutter_codes().is_empty()
    }
}

/// One main-tier line.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatUtterance {
    pub speaker: String,
    pub words: Vec<ChatWord>,
}

/// A parsed CHAT document: headers, main-tier utterances, and any warnings
/// raised for unknown codes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatTranscript {
    pub headers: Vec<String>,
    pub utterances: Vec<ChatUtterance>,
    pub warnings: Vec<String>,
}

impl ChatTranscript {
    /// All words across utterances, flattened in reading order, with their
    /// `(utterance, word)` coordinates.
    pub fn flat_words(&self) -> Vec<(usize, usize, &ChatWord)> {
        let mut out = Vec::new();
        for (u, utt) in self.utterances.iter().enumerate() {
            for (w, word) in utt.words.iter().enumerate() {
                out.push((u, w, word));
            }
        }
        out
    }

    pub fn word_count(&self) -> usize {
        self.utterances.iter().map(|u| u.words.len()).sum()
    }
}

/// Lowercased, alphanumeric-only form used for alignment comparisons.
pub fn normalize_surface(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(|c| c.to_lowercase())
        .collect()
}

fn is_terminator(token: &str) -> bool {
    matches!(token, "." | "?" | "!" | "+..." | "+//." | "+/.")
}

/// Parses a CHAT document with the default code map.
pub fn parse_chat(text: &str) -> Result<ChatTranscript, ChatParseError> {
    parse_chat_with(text, &CodeMap::default())
}

/// Parses a CHAT document, attaching codes to the words they annotate.
pub fn parse_chat_with(text: &str, codes: &CodeMap) -> Result<ChatTranscript, ChatParseError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    // Merge tab-indented continuation lines into their tier line, keeping
    // the original line number of the tier start for error reporting.
    let mut tiers: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.starts_with('\t') || raw.starts_with("    ") {
            if let Some((_, prev)) = tiers.last_mut() {
                prev.push(' ');
                prev.push_str(raw.trim());
                continue;
            }
        }
        tiers.push((line_no, raw.to_owned()));
    }

    let mut doc = ChatTranscript::default();
    for (line_no, line) in tiers {
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed.chars().next().unwrap() {
            '@' => doc.headers.push(trimmed.to_owned()),
            '%' => {} // dependent tiers carry no word-level stutter codes
            '*' => {
                let Some(colon) = trimmed.find(':') else {
                    return Err(ChatParseError::MalformedLine {
                        line: line_no,
                        reason: "main tier is missing `:` after the speaker code".into(),
                    });
                };
                let speaker = trimmed[1..colon].trim().to_owned();
                if speaker.is_empty() {
                    return Err(ChatParseError::MalformedLine {
                        line: line_no,
                        reason: "empty speaker code".into(),
                    });
                }
                let body = &trimmed[colon + 1..];
                let words = parse_tier_body(body, line_no, codes, &mut doc.warnings)?;
                doc.utterances.push(ChatUtterance { speaker, words });
            }
            _ => {
                return Err(ChatParseError::MalformedLine {
                    line: line_no,
                    reason: format!("unrecognized tier start `{}`", trimmed.chars().next().unwrap()),
                });
            }
        }
    }
    Ok(doc)
}

fn parse_tier_body(
    body: &str,
    line_no: usize,
    codes: &CodeMap,
    warnings: &mut Vec<String>,
) -> Result<Vec<ChatWord>, ChatParseError> {
    let mut words: Vec<ChatWord> = Vec::new();
    // Indices of words inside the most recent <...> group, for group-scoped
    // codes like `<w1 w2> [/]`.
    let mut last_group: Vec<usize> = Vec::new();
    let mut group_open: Option<usize> = None;
    // Codes from standalone fragments (`&+s`) waiting for the next word.
    let mut pending: Vec<WordCode> = Vec::new();

    let mut tokens = body.split_whitespace().peekable();
    while let Some(token) = tokens.next() {
        if is_terminator(token) {
            continue;
        }

        // Bracket codes attach to the preceding word or group.
        if token.starts_with('[') {
            let mut bracket = token.to_owned();
            while !bracket.ends_with(']') {
                match tokens.next() {
                    Some(t) => {
                        bracket.push(' ');
                        bracket.push_str(t);
                    }
                    None => return Err(ChatParseError::UnterminatedBracket { line: line_no }),
                }
            }
            let inner = bracket[1..bracket.len() - 1].trim();
            let code = if let Some(named) = inner.strip_prefix('*') {
                let named = named.trim();
                match codes.lookup(named) {
                    Some(stutter) => WordCode::Stutter(stutter),
                    None => {
                        warnings.push(format!(
                            "line {line_no}: unknown code `[* {named}]` kept as opaque"
                        ));
                        WordCode::Opaque(named.to_owned())
                    }
                }
            } else {
                match inner {
                    "/" => WordCode::Typical("repetition"),
                    "//" => WordCode::Typical("revision"),
                    other => {
                        warnings.push(format!(
                            "line {line_no}: unknown code `[{other}]` kept as opaque"
                        ));
                        WordCode::Opaque(other.to_owned())
                    }
                }
            };
            let targets: Vec<usize> = if !last_group.is_empty() {
                last_group.clone()
            } else if let Some(last) = words.len().checked_sub(1) {
                vec![last]
            } else {
                warnings.push(format!("line {line_no}: code `{bracket}` has no word to attach to"));
                continue;
            };
            for t in targets {
                words[t].codes.push(code.clone());
            }
            last_group.clear();
            continue;
        }

        // Phonological fragment: a sound produced before the word proper.
        // The repetition code lands on the word that follows.
        if let Some(frag) = token.strip_prefix("&+") {
            if !frag.is_empty() {
                pending.push(WordCode::Stutter(StutterCode::SoundSyllableRepetition));
            }
            continue;
        }

        // Filler: a spoken word in its own right, typical disfluency.
        if let Some(filler) = token.strip_prefix("&-") {
            if !filler.is_empty() {
                words.push(ChatWord {
                    surface: filler.to_owned(),
                    codes: vec![WordCode::Typical("filler")],
                });
            }
            continue;
        }

        let mut surface = token;
        let mut opened_here = false;
        if let Some(stripped) = surface.strip_prefix('<') {
            surface = stripped;
            group_open = Some(words.len());
            opened_here = true;
        }
        let mut closes_group = false;
        if let Some(stripped) = surface.strip_suffix('>') {
            surface = stripped;
            closes_group = true;
        }
        let surface = surface.trim_matches(|c: char| matches!(c, ',' | ';'));
        if surface.is_empty() {
            continue;
        }

        let mut codes_here = std::mem::take(&mut pending);
        codes_here.extend(inline_glyph_codes(surface));
        words.push(ChatWord { surface: strip_glyphs(surface), codes: codes_here });

        if closes_group {
            let start = group_open.take().unwrap_or(words.len() - 1);
            last_group = (start..words.len()).collect();
        } else if !opened_here && group_open.is_none() {
            last_group.clear();
        }
    }

    if !pending.is_empty() {
        warnings.push(format!(
            "line {line_no}: {} fragment code(s) had no following word",
            pending.len()
        ));
    }
    Ok(words)
}

/// Inline glyph conventions: `:` inside a word marks a prolongation,
/// `^` a broken word, a `≠` prefix a block.
fn inline_glyph_codes(surface: &str) -> Vec<WordCode> {
    let mut out = Vec::new();
    if surface.starts_with('≠') {
        out.push(WordCode::Stutter(StutterCode::Block));
    }
    let interior: Vec<char> = surface.chars().collect();
    if interior.iter().skip(1).take(interior.len().saturating_sub(2)).any(|&c| c == ':') {
        out.push(WordCode::Stutter(StutterCode::Prolongation));
    }
    if interior.iter().any(|&c| c == '^') {
        out.push(WordCode::Stutter(StutterCode::BrokenWord));
    }
    out
}

fn strip_glyphs(surface: &str) -> String {
    surface
        .chars()
        .filter(|&c| c != ':' && c != '^' && c != '≠')
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_prolongation_code() {
        let doc = parse_chat("*PAR:\tI s:at down .\n").unwrap();
        assert_eq!(doc.utterances.len(), 1);
        let words = &doc.utterances[0].words;
        assert_eq!(words.len(), 3);
        assert_eq!(words[1].surface, "sat");
        assert_eq!(words[1].codes, vec![WordCode::Stutter(StutterCode::Prolongation)]);
        assert!(words[0].codes.is_empty());
    }

    #[test]
    fn fluent_line_has_no_codes() {
        let doc = parse_chat("*PAR:\tthe cat sat .\n").unwrap();
        assert!(doc.utterances[0].words.iter().all(|w| w.codes.is_empty()));
    }

    #[test]
    fn block_plus_sound_repetition_gives_two_stutter_codes() {
        let doc = parse_chat("*PAR:\t≠go [* sr] home .\n").unwrap();
        let word = &doc.utterances[0].words[0];
        assert_eq!(word.surface, "go");
        let mut set = word.stutter_codes();
        set.sort();
        assert_eq!(set, vec![StutterCode::Block, StutterCode::SoundSyllableRepetition]);
        assert_eq!(set.len(), 2);
    }

    #[test]
    fn bracket_codes_attach_to_previous_word() {
        let doc = parse_chat("*PAR:\twent [* blk] there [* epen] .\n").unwrap();
        let words = &doc.utterances[0].words;
        assert_eq!(words[0].codes, vec![WordCode::Stutter(StutterCode::Block)]);
        assert_eq!(words[1].codes, vec![WordCode::Stutter(StutterCode::Epenthesis)]);
    }

    #[test]
    fn unknown_code_warns_and_is_kept_opaque() {
        let doc = parse_chat("*PAR:\tfine [* zzz] .\n").unwrap();
        assert_eq!(doc.warnings.len(), 1);
        assert_eq!(
            doc.utterances[0].words[0].codes,
            vec![WordCode::Opaque("zzz".into())]
        );
        assert!(!doc.utterances[0].words[0].is_stuttered());
    }

    #[test]
    fn fragments_mark_following_word() {
        let doc = parse_chat("*PAR:\t&+s &+s sun rose .\n").unwrap();
        let words = &doc.utterances[0].words;
        assert_eq!(words[0].surface, "sun");
        assert_eq!(
            words[0].stutter_codes(),
            vec![
                StutterCode::SoundSyllableRepetition,
                StutterCode::SoundSyllableRepetition
            ]
        );
        assert!(words[1].codes.is_empty());
    }

    #[test]
    fn fillers_become_typical_words() {
        let doc = parse_chat("*PAR:\t&-uh okay .\n").unwrap();
        let words = &doc.utterances[0].words;
        assert_eq!(words[0].surface, "uh");
        assert_eq!(words[0].codes, vec![WordCode::Typical("filler")]);
        assert!(!words[0].is_stuttered());
    }

    #[test]
    fn group_retrace_marks_all_group_words() {
        let doc = parse_chat("*PAR:\t<the cat> [/] the cat sat .\n").unwrap();
        let words = &doc.utterances[0].words;
        assert_eq!(words.len(), 5);
        assert_eq!(words[0].codes, vec![WordCode::Typical("repetition")]);
        assert_eq!(words[1].codes, vec![WordCode::Typical("repetition")]);
        assert!(words[2].codes.is_empty());
    }

    #[test]
    fn headers_and_dependent_tiers_are_skipped() {
        let text = "@UTF8\n@Begin\n*PAR:\thello there .\n%com:\tnothing\n@End\n";
        let doc = parse_chat(text).unwrap();
        assert_eq!(doc.headers.len(), 3);
        assert_eq!(doc.utterances.len(), 1);
    }

    #[test]
    fn continuation_lines_join_previous_tier() {
        let text = "*PAR:\tthe quick brown\n\tfox jumped .\n";
        let doc = parse_chat(text).unwrap();
        assert_eq!(doc.utterances[0].words.len(), 5);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_chat("*PAR missing colon\n").unwrap_err();
        assert_eq!(
            err,
            ChatParseError::MalformedLine {
                line: 1,
                reason: "main tier is missing `:` after the speaker code".into()
            }
        );
        let err = parse_chat("*PAR:\tok .\njunk line\n").unwrap_err();
        assert!(matches!(err, ChatParseError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn normalization_strips_case_and_punctuation() {
        assert_eq!(normalize_surface("Hello,"), "hello");
        assert_eq!(normalize_surface("don't"), "don't");
        assert_eq!(normalize_surface("s:at"), "sat");
    }
}
