//! COPY directive scanner.
//!
//! Accepted grammar:
//!
//! ```text
//! COPY name [OF|IN library] [REPLACING ==from== BY ==to== ...] .
//! ```
//!
//! Only the code area (columns 8-72) is read. A directive may continue
//! over several lines but must reach its closing period within
//! [`MAX_DIRECTIVE_LINES`] lines.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{CodePos, CopyDirective, ExpandError, FixedFormatSource, Span};

pub const MAX_DIRECTIVE_LINES: usize = 16;

pub(super) const CODE_START: usize = 7;
pub(super) const CODE_END: usize = 72;

#[derive(Debug, Clone, Copy)]
struct Item {
    ch: char,
    line: usize,
    col: usize,
}

const NEWLINE: char = '\n';

/// Code-area characters of all lines with a newline marker after each line.
fn code_stream(src: &FixedFormatSource) -> Vec<Item> {
    let mut items = Vec::new();
    for (line, text) in src.lines.iter().enumerate() {
        let mut width = 0;
        for (col, ch) in text.text.chars().enumerate() {
            width = col + 1;
            if (CODE_START..CODE_END).contains(&col) {
                items.push(Item { ch, line, col });
            }
        }
        items.push(Item {
            ch: NEWLINE,
            line,
            col: width.max(CODE_START),
        });
    }
    items
}

fn is_space(ch: char) -> bool {
    ch.is_whitespace() || ch == ',' || ch == ';'
}

fn is_quote(ch: char) -> bool {
    ch == '"' || ch == '\''
}

/// A period ends a sentence only when followed by a separator.
fn is_separator_period(items: &[Item], i: usize) -> bool {
    items[i].ch == '.' && items.get(i + 1).is_none_or(|n| is_space(n.ch))
}

fn is_word_char(items: &[Item], i: usize) -> bool {
    let ch = items[i].ch;
    !(is_space(ch) || is_quote(ch) || ch == '(' || ch == ')' || is_separator_period(items, i))
}

fn read_word(items: &[Item], mut i: usize) -> (String, usize) {
    let mut word = String::new();
    while i < items.len() && is_word_char(items, i) {
        word.push(items[i].ch);
        i += 1;
    }
    (word, i)
}

fn skip_literal(items: &[Item], i: usize) -> usize {
    let quote = items[i].ch;
    let mut j = i + 1;
    while j < items.len() && items[j].ch != NEWLINE {
        if items[j].ch == quote {
            return j + 1;
        }
        j += 1;
    }
    j
}

/// Finds every COPY directive in `src`, in order of appearance.
///
/// Comment lines should already have been removed.
pub fn scan_copies(src: &FixedFormatSource) -> Result<Vec<CopyDirective>, ExpandError> {
    let items = code_stream(src);
    let mut found = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let ch = items[i].ch;
        if ch == NEWLINE || is_space(ch) || ch == '(' || ch == ')' || ch == '.' {
            i += 1;
        } else if is_quote(ch) {
            i = skip_literal(&items, i);
        } else {
            let (word, next) = read_word(&items, i);
            if word.eq_ignore_ascii_case("COPY") {
                let (directive, after) = parse_directive(src, &items, i, next)?;
                found.push(directive);
                i = after;
            } else {
                i = next.max(i + 1);
            }
        }
    }
    Ok(found)
}

#[derive(Debug)]
enum Token {
    Word(String),
    Pseudo(String),
    Period,
}

struct DirectiveParser<'a> {
    src: &'a FixedFormatSource,
    items: &'a [Item],
    start: Item,
    pos: usize,
}

impl DirectiveParser<'_> {
    fn fail(&self, reason: impl Into<String>) -> ExpandError {
        ExpandError::MalformedCopy {
            origin: self.src.origin.clone(),
            line: self.src.lines[self.start.line].number,
            reason: reason.into(),
        }
    }

    fn check_extent(&self, line: usize) -> Result<(), ExpandError> {
        if line - self.start.line >= MAX_DIRECTIVE_LINES {
            Err(self.fail(format!(
                "no terminating period within {MAX_DIRECTIVE_LINES} lines"
            )))
        } else {
            Ok(())
        }
    }

    fn next(&mut self) -> Result<Token, ExpandError> {
        let items = self.items;
        while self.pos < items.len()
            && (items[self.pos].ch == NEWLINE || is_space(items[self.pos].ch))
        {
            self.pos += 1;
        }
        let Some(item) = items.get(self.pos) else {
            return Err(self.fail("missing terminating period"));
        };
        self.check_extent(item.line)?;

        if is_separator_period(items, self.pos) {
            self.pos += 1;
            return Ok(Token::Period);
        }
        if item.ch == '=' && items.get(self.pos + 1).is_some_and(|n| n.ch == '=') {
            return self.pseudo_text();
        }
        if is_quote(item.ch) {
            return Err(self.fail("literal operands are not supported"));
        }
        let (word, next) = read_word(items, self.pos);
        if word.is_empty() {
            return Err(self.fail(format!("unexpected character {:?}", item.ch)));
        }
        self.pos = next;
        Ok(Token::Word(word))
    }

    fn pseudo_text(&mut self) -> Result<Token, ExpandError> {
        let items = self.items;
        let mut j = self.pos + 2;
        let mut text = String::new();
        while j < items.len() {
            if items[j].ch == '=' && items.get(j + 1).is_some_and(|n| n.ch == '=') {
                self.pos = j + 2;
                let normalized: Vec<&str> = text.split_whitespace().collect();
                return Ok(Token::Pseudo(normalized.join(" ")));
            }
            self.check_extent(items[j].line)?;
            text.push(if items[j].ch == NEWLINE {
                ' '
            } else {
                items[j].ch
            });
            j += 1;
        }
        Err(self.fail("unterminated pseudo-text"))
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

fn parse_directive(
    src: &FixedFormatSource,
    items: &[Item],
    copy_at: usize,
    after_keyword: usize,
) -> Result<(CopyDirective, usize), ExpandError> {
    let mut p = DirectiveParser {
        src,
        items,
        start: items[copy_at],
        pos: after_keyword,
    };

    let name = match p.next()? {
        Token::Word(w) if valid_name(&w) => w.to_ascii_uppercase(),
        Token::Word(w) => return Err(p.fail(format!("invalid copybook name {w:?}"))),
        _ => return Err(p.fail("missing copybook name")),
    };

    let mut library = None;
    let mut replacements = Vec::new();
    let mut token = p.next()?;

    if let Token::Word(w) = &token {
        if w.eq_ignore_ascii_case("OF") || w.eq_ignore_ascii_case("IN") {
            library = match p.next()? {
                Token::Word(lib) if valid_name(&lib) => Some(lib.to_ascii_uppercase()),
                _ => return Err(p.fail("missing or invalid library name")),
            };
            token = p.next()?;
        }
    }

    if let Token::Word(w) = &token {
        if w.eq_ignore_ascii_case("REPLACING") {
            token = p.next()?;
            loop {
                let from = match token {
                    Token::Pseudo(text) if !text.is_empty() => text,
                    Token::Pseudo(_) => return Err(p.fail("empty REPLACING operand")),
                    Token::Period if !replacements.is_empty() => break,
                    _ => return Err(p.fail("expected ==pseudo-text== operand")),
                };
                match p.next()? {
                    Token::Word(by) if by.eq_ignore_ascii_case("BY") => {}
                    _ => return Err(p.fail("expected BY")),
                }
                let to = match p.next()? {
                    Token::Pseudo(text) => text,
                    _ => return Err(p.fail("expected ==pseudo-text== after BY")),
                };
                replacements.push((from, to));
                token = p.next()?;
            }
        }
    }

    match token {
        Token::Period => {}
        Token::Word(w) => return Err(p.fail(format!("unexpected {w:?}"))),
        Token::Pseudo(_) => return Err(p.fail("unexpected pseudo-text")),
    }

    let end = items[p.pos - 1];
    let start = items[copy_at];
    let directive = CopyDirective {
        name,
        library,
        replacements,
        source_span: Span {
            start: CodePos {
                line: start.line,
                col: start.col,
            },
            end: CodePos {
                line: end.line,
                col: end.col + 1,
            },
        },
        origin_line: src.lines[start.line].number,
    };
    Ok((directive, p.pos))
}

impl CopyDirective {
    /// The directive as written, normalized to one line.
    pub fn to_source(&self) -> String {
        let mut s = format!("COPY {}", self.name);
        if let Some(lib) = &self.library {
            s.push_str(" OF ");
            s.push_str(lib);
        }
        if !self.replacements.is_empty() {
            s.push_str(" REPLACING");
            for (from, to) in &self.replacements {
                s.push_str(&format!(" =={from}== BY =={to}=="));
            }
        }
        s.push('.');
        s.to_string()
    }
}
