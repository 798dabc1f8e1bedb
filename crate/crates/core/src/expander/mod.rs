//! COBOL copybook expansion.
//!
//! Turns a fixed-format COBOL source into a self-contained, test-ready
//! file: comment lines are dropped, every `COPY` directive is replaced by
//! the text of the copybook it names (expanded recursively, with any
//! `REPLACING` pairs applied to the embedded region), and each output line
//! remembers the file and line it came from.
//!
//! Layout assumed throughout: columns 1-6 sequence area, column 7
//! indicator, columns 8-72 code. Text past column 72 is ignored when
//! looking for directives but kept in the output.

mod replacing;
mod scan;

pub use replacing::apply_replacing;
pub use scan::{scan_copies, MAX_DIRECTIVE_LINES};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use scan::{CODE_END, CODE_START};

/// Hard limit on line length in characters.
pub const MAX_LINE_LEN: usize = 255;

pub const DEFAULT_MAX_DEPTH: usize = 10;

const INDICATOR_COL: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExpandError {
    #[error("{origin}:{line}: line is longer than {MAX_LINE_LEN} characters")]
    LineTooLong { origin: String, line: usize },
    #[error("{origin}:{line}: malformed COPY directive: {reason}")]
    MalformedCopy {
        origin: String,
        line: usize,
        reason: String,
    },
    #[error("copybook {name} not found (requested by {requester})")]
    CopybookNotFound { name: String, requester: String },
    #[error("copybook {name} requested by {requester} could not be read: {reason}")]
    Unreadable {
        name: String,
        requester: String,
        reason: String,
    },
    #[error("copy cycle: {}", .path.join(" -> "))]
    CopyCycle { path: Vec<String> },
    #[error("copybook nesting deeper than {max_depth}: {}", .path.join(" -> "))]
    DepthExceeded { max_depth: usize, path: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLine {
    /// 1-based line number in the original file.
    pub number: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedFormatSource {
    pub origin: String,
    pub lines: Vec<SourceLine>,
}

impl FixedFormatSource {
    /// Splits `text` into lines (LF or CRLF).
    pub fn parse(origin: impl Into<String>, text: &str) -> Result<Self, ExpandError> {
        Self::from_lines(origin, text.lines().map(ToString::to_string))
    }

    pub fn from_lines<I>(origin: impl Into<String>, lines: I) -> Result<Self, ExpandError>
    where
        I: IntoIterator<Item = String>,
    {
        let origin = origin.into();
        let mut out = Vec::new();
        for (idx, text) in lines.into_iter().enumerate() {
            if text.chars().count() > MAX_LINE_LEN {
                return Err(ExpandError::LineTooLong {
                    origin,
                    line: idx + 1,
                });
            }
            out.push(SourceLine {
                number: idx + 1,
                text,
            });
        }
        Ok(Self { origin, lines: out })
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|l| l.text.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CodePos {
    /// Index into the scanned source's `lines`.
    pub line: usize,
    /// Character column, 0-based.
    pub col: usize,
}

/// Directive extent: `start` is the `C` of `COPY`, `end` is one past the
/// closing period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: CodePos,
    pub end: CodePos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CopyDirective {
    pub name: String,
    pub library: Option<String>,
    pub replacements: Vec<(String, String)>,
    pub source_span: Span,
    /// Original (pre-strip) line number of the `COPY` keyword.
    pub origin_line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LineOrigin {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for LineOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExpandedSource {
    pub lines: Vec<String>,
    pub provenance: Vec<LineOrigin>,
    pub copybooks_used: BTreeSet<String>,
}

impl ExpandedSource {
    /// Lines joined with `\n`, with a trailing newline when non-empty.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Copybook {
    /// Stable identifier used in provenance and error paths.
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchError {
    NotFound,
    Unreadable(String),
}

/// Somewhere copybooks can be looked up by name.
///
/// Names arrive uppercased. Implementations decide how an optional
/// library qualifier narrows the search.
pub trait CopybookSource {
    fn fetch(&self, name: &str, library: Option<&str>) -> Result<Copybook, FetchError>;
}

impl<T: CopybookSource + ?Sized> CopybookSource for &T {
    fn fetch(&self, name: &str, library: Option<&str>) -> Result<Copybook, FetchError> {
        (**self).fetch(name, library)
    }
}

/// In-memory copybook store keyed by `NAME` or `LIBRARY/NAME`.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    books: BTreeMap<String, String>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, text: impl Into<String>) -> &mut Self {
        self.books.insert(key.to_ascii_uppercase(), text.into());
        self
    }
}

impl CopybookSource for MemoryStore {
    fn fetch(&self, name: &str, library: Option<&str>) -> Result<Copybook, FetchError> {
        let name = name.to_ascii_uppercase();
        let qualified = library.map(|lib| format!("{}/{name}", lib.to_ascii_uppercase()));
        for key in qualified.into_iter().chain(core::iter::once(name)) {
            if let Some(text) = self.books.get(&key) {
                return Ok(Copybook {
                    id: key,
                    text: text.clone(),
                });
            }
        }
        Err(FetchError::NotFound)
    }
}

/// Drops every line whose indicator column (column 7) holds `*` or `/`.
pub fn strip_comments(src: &FixedFormatSource) -> FixedFormatSource {
    FixedFormatSource {
        origin: src.origin.clone(),
        lines: src
            .lines
            .iter()
            .filter(|l| !matches!(l.text.chars().nth(INDICATOR_COL), Some('*' | '/')))
            .cloned()
            .collect(),
    }
}

/// Strips comments and recursively replaces every COPY directive by the
/// copybook it names.
///
/// Cycles are detected on the chain of copybooks currently being
/// expanded; `max_depth` bounds the nesting as a second guard.
pub fn expand<S>(
    src: &FixedFormatSource,
    store: &S,
    max_depth: usize,
) -> Result<ExpandedSource, ExpandError>
where
    S: CopybookSource + ?Sized,
{
    let mut expander = Expander {
        store,
        max_depth,
        stack: Vec::new(),
        used: BTreeSet::new(),
    };
    let mut out = Region::default();
    expander.expand_into(src, &mut out)?;
    Ok(ExpandedSource {
        lines: out.lines,
        provenance: out.provenance,
        copybooks_used: expander.used,
    })
}

#[derive(Default)]
struct Region {
    lines: Vec<String>,
    provenance: Vec<LineOrigin>,
}

impl Region {
    fn push(&mut self, text: String, file: &str, line: usize) {
        self.lines.push(text);
        self.provenance.push(LineOrigin {
            file: file.to_string(),
            line,
        });
    }

    fn append(&mut self, other: Region) {
        self.lines.extend(other.lines);
        self.provenance.extend(other.provenance);
    }
}

struct Expander<'a, S: ?Sized> {
    store: &'a S,
    max_depth: usize,
    stack: Vec<String>,
    used: BTreeSet<String>,
}

impl<S: CopybookSource + ?Sized> Expander<'_, S> {
    fn expand_into(
        &mut self,
        src: &FixedFormatSource,
        out: &mut Region,
    ) -> Result<(), ExpandError> {
        let stripped = strip_comments(src);
        let directives = scan_copies(&stripped)?;

        let mut cursor = CodePos { line: 0, col: 0 };
        for directive in &directives {
            emit_between(&stripped, cursor, directive.source_span.start, out);
            self.include(&stripped.origin, directive, out)?;
            cursor = directive.source_span.end;
        }
        let end = CodePos {
            line: stripped.lines.len(),
            col: 0,
        };
        emit_between(&stripped, cursor, end, out);
        Ok(())
    }

    fn include(
        &mut self,
        requester: &str,
        directive: &CopyDirective,
        out: &mut Region,
    ) -> Result<(), ExpandError> {
        let book = self
            .store
            .fetch(&directive.name, directive.library.as_deref())
            .map_err(|err| match err {
                FetchError::NotFound => ExpandError::CopybookNotFound {
                    name: directive.name.clone(),
                    requester: requester.to_string(),
                },
                FetchError::Unreadable(reason) => ExpandError::Unreadable {
                    name: directive.name.clone(),
                    requester: requester.to_string(),
                    reason,
                },
            })?;

        if self.stack.contains(&book.id) {
            let mut path = self.stack.clone();
            path.push(book.id);
            let first = path
                .iter()
                .position(|id| *id == path[path.len() - 1])
                .unwrap_or(0);
            return Err(ExpandError::CopyCycle {
                path: path[first..].to_vec(),
            });
        }
        if self.stack.len() >= self.max_depth {
            let mut path = self.stack.clone();
            path.push(book.id);
            return Err(ExpandError::DepthExceeded {
                max_depth: self.max_depth,
                path,
            });
        }

        let parsed = FixedFormatSource::parse(book.id.clone(), &book.text)?;
        self.used.insert(book.id.clone());
        self.stack.push(book.id);
        let mut region = Region::default();
        let result = self.expand_into(&parsed, &mut region);
        self.stack.pop();
        result?;

        if !directive.replacements.is_empty() {
            region.lines = apply_replacing(&region.lines, &directive.replacements);
        }
        out.append(region);
        Ok(())
    }
}

fn code_area_blank(chars: &[char]) -> bool {
    chars
        .iter()
        .take(CODE_END)
        .skip(CODE_START)
        .all(|c| c.is_whitespace())
}

/// Copies the text between two positions of `src` into `out`.
///
/// Whole lines are copied verbatim. A line cut by a directive keeps its
/// columns (consumed text becomes spaces) and is dropped when no code is
/// left on it.
fn emit_between(src: &FixedFormatSource, from: CodePos, to: CodePos, out: &mut Region) {
    let last = to.line.min(src.lines.len().saturating_sub(1));
    if src.lines.is_empty() || from.line > last {
        return;
    }
    for idx in from.line..=last {
        let line = &src.lines[idx];
        let chars: Vec<char> = line.text.chars().collect();
        let start = if idx == from.line { from.col } else { 0 };
        let end = if idx == to.line { to.col } else { chars.len() };
        let end = end.min(chars.len());
        let start = start.min(end);
        if start == 0 && end == chars.len() {
            out.push(line.text.clone(), &src.origin, line.number);
            continue;
        }
        let mut fragment: Vec<char> = core::iter::repeat_n(' ', start).collect();
        fragment.extend_from_slice(&chars[start..end]);
        if code_area_blank(&fragment) {
            continue;
        }
        let text: String = fragment.into_iter().collect();
        out.push(text.trim_end().to_string(), &src.origin, line.number);
    }
}
