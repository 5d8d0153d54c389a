//! Rule-based sentence boundary detection.
//!
//! A boundary is a run of `.`, `!` or `?` (plus any closing quotes or
//! brackets) followed by whitespace and then an uppercase letter or digit,
//! optionally behind an opening quote. A period after a listed
//! abbreviation or a single-letter initial never ends a sentence.

use super::Sentence;

pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "vs", "etc", "inc", "ltd", "co", "corp",
    "gen", "gov", "sen", "rep", "rev", "col", "lt", "sgt", "capt", "no", "fig", "eq", "approx",
    "dept", "est", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov",
    "dec", "e.g", "i.e", "u.s", "u.k", "a.m", "p.m", "al",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '»')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '“' | '‘' | '«')
}

/// The word (letters and inner periods) immediately before byte offset `end`.
fn word_before(text: &str, end: usize) -> &str {
    let head = &text[..end];
    let start = head
        .char_indices()
        .rev()
        .find(|&(_, c)| !(c.is_alphabetic() || c == '.'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    head[start..].trim_start_matches('.')
}

fn protected(text: &str, period_at: usize) -> bool {
    let word = word_before(text, period_at);
    if word.is_empty() {
        return false;
    }
    if word.chars().count() == 1 && word.chars().all(char::is_alphabetic) {
        return true;
    }
    let lower = word.to_lowercase();
    ABBREVIATIONS.contains(&lower.as_str())
}

pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !is_terminator(c) {
            i += 1;
            continue;
        }
        let first_term = pos;
        let mut j = i;
        while j < chars.len() && is_terminator(chars[j].1) {
            j += 1;
        }
        let single_period = j == i + 1 && c == '.';
        while j < chars.len() && is_closer(chars[j].1) {
            j += 1;
        }
        let end = chars.get(j).map(|&(p, _)| p).unwrap_or(text.len());
        let mut k = j;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let has_space = k > j;
        let mut m = k;
        while m < chars.len() && is_opener(chars[m].1) {
            m += 1;
        }
        let next_ok = chars
            .get(m)
            .map(|&(_, n)| n.is_uppercase() || n.is_ascii_digit())
            .unwrap_or(false);
        let boundary = has_space && next_ok && !(single_period && protected(text, first_term));
        if boundary {
            push_trimmed(&mut out, &text[start..end]);
            start = chars[k].0;
            i = k;
        } else {
            i = j.max(i + 1);
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<Sentence>, piece: &str) {
    let t = piece.trim();
    if !t.is_empty() {
        out.push(Sentence::new(t));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<String> {
        segment_sentences(s).into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(texts("A cat sat. It slept."), vec!["A cat sat.", "It slept."]);
    }

    #[test]
    fn abbreviation_is_protected() {
        assert_eq!(texts("Dr. Smith left. He ran."), vec!["Dr. Smith left.", "He ran."]);
        assert_eq!(texts("J. R. Tolkien wrote. Fans read."), vec!["J. R. Tolkien wrote.", "Fans read."]);
        assert_eq!(texts("It was in the U.S. Army base. Then."), vec!["It was in the U.S. Army base.", "Then."]);
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(texts("no terminator here"), vec!["no terminator here"]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(texts("Pi is approx. three. Really."), vec!["Pi is approx. three.", "Really."]);
        assert_eq!(texts("see the value 3.14 here. Ok"), vec!["see the value 3.14 here.", "Ok"]);
        assert_eq!(texts("wait... and then. Done"), vec!["wait... and then.", "Done"]);
    }

    #[test]
    fn quotes_and_mixed_terminators() {
        assert_eq!(
            texts("He said \"stop!\" Then left?! 42 people cheered."),
            vec!["He said \"stop!\"", "Then left?!", "42 people cheered."]
        );
        assert_eq!(texts("Really? \"Yes.\""), vec!["Really?", "\"Yes.\""]);
    }

    proptest! {
        #[test]
        fn reconstructs_input(words in proptest::collection::vec("[A-Za-z]{1,6}[.!?]?", 1..30)) {
            let text = words.join(" ");
            let sents = segment_sentences(&text);
            prop_assert!(sents.iter().all(|s| !s.text.trim().is_empty()));
            let joined: String = sents.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
            let squash = |s: &str| s.split_whitespace().collect::<String>();
            prop_assert_eq!(squash(&joined), squash(&text));
        }
    }
}
