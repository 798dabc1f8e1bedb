//! REPLACING substitution over an embedded region.
//!
//! Lines are scanned left to right once. At each position the pairs are
//! tried in order and the first that matches wins; its replacement is
//! emitted and scanning resumes after the matched text. Replacement text is
//! never rescanned, so pairs cannot cascade.
//!
//! A `from` operand matches only at text-word boundaries: if it starts
//! (ends) with a word character, the character before (after) the match
//! must not be one. A single space inside `from` matches any run of
//! whitespace. Matching is case-sensitive.

use alloc::string::String;
use alloc::vec::Vec;

fn is_word(ch: char) -> bool {
    ch.is_alphanumeric() || ch == '-' || ch == '_'
}

/// Length in chars of the match of `from` at `line[at..]`, if any.
fn match_at(line: &[char], at: usize, from: &[char]) -> Option<usize> {
    let first = *from.first()?;
    if is_word(first) && at > 0 && is_word(line[at - 1]) {
        return None;
    }
    let mut j = at;
    let mut k = 0;
    while k < from.len() {
        let want = from[k];
        if want == ' ' {
            let ws_start = j;
            while j < line.len() && line[j].is_whitespace() {
                j += 1;
            }
            if j == ws_start {
                return None;
            }
        } else {
            if line.get(j) != Some(&want) {
                return None;
            }
            j += 1;
        }
        k += 1;
    }
    let last = from[from.len() - 1];
    if is_word(last) && j < line.len() && is_word(line[j]) {
        return None;
    }
    Some(j - at)
}

fn replace_line(line: &str, pairs: &[(Vec<char>, &str)]) -> String {
    let chars: Vec<char> = line.chars().collect();
    let mut out = String::with_capacity(line.len());
    let mut i = 0;
    'scan: while i < chars.len() {
        for (from, to) in pairs {
            if let Some(len) = match_at(&chars, i, from) {
                out.push_str(to);
                i += len;
                continue 'scan;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    out
}

/// Applies ordered REPLACING pairs to every line of `region`.
pub fn apply_replacing(region: &[String], pairs: &[(String, String)]) -> Vec<String> {
    if pairs.is_empty() {
        return region.to_vec();
    }
    let compiled: Vec<(Vec<char>, &str)> = pairs
        .iter()
        .filter(|(from, _)| !from.is_empty())
        .map(|(from, to)| (from.chars().collect(), to.as_str()))
        .collect();
    region
        .iter()
        .map(|line| replace_line(line, &compiled))
        .collect()
}
