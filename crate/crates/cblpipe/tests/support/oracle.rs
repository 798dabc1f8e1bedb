//! Reference expander and random copybook fixtures.
//!
//! The reference handles only what the generator emits: one COPY per line,
//! written entirely on that line. REPLACING is applied by trying every
//! pair at every character position with a regex and then sweeping left to
//! right over the candidates, which shares no code with the library.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

#[derive(Debug, Clone)]
pub struct GeneratedFixture {
    pub seed: u64,
    pub main: String,
    pub books: BTreeMap<String, String>,
    pub uses_replacing: bool,
    /// Longest COPY chain from the main program, counted in books.
    pub depth: usize,
}

pub const MAX_BOOKS: usize = 8;
pub const MAX_DEPTH: usize = 5;

const VOCAB: &[(&str, &str)] = &[
    (":TAG:", "CUST"),
    ("FLD-A", "AMOUNT"),
    ("FLD", "FIELD"),
    ("PIC X(10)", "PIC X(24)"),
    ("PREFIX", "PFX"),
    ("VALUE 7", "VALUE 8"),
    ("ITEM", "ENTRY"),
];

fn seq_area(rng: &mut ChaCha8Rng, n: usize) -> String {
    if rng.gen_bool(0.5) {
        format!("{:06}", n * 100)
    } else {
        "      ".to_string()
    }
}

fn body_line(rng: &mut ChaCha8Rng, book: usize, k: usize) -> String {
    let spaces = " ".repeat(rng.gen_range(1..=3));
    match rng.gen_range(0..7) {
        0 => format!("           05 :TAG:-ITEM-{book}-{k}{spaces}PIC X(10)."),
        1 => format!("           05 FLD-A-{book}{k}{spaces}PIC 9(4) VALUE 7."),
        2 => format!("           05 FLD-{book}-{k} PIC{spaces}X(10)."),
        3 => format!("           05 PREFIX-{book}{k}-NAME PIC X(10)."),
        4 => format!("           05 FLDX-{book}{k} PIC 9 VALUE 77."),
        5 => format!("           05 ITEM-{book}{k}{spaces}PIC X(10) VALUE 'FLD'."),
        _ => format!("           05 WS-{book}-{k}-FLD-A PIC 9."),
    }
}

fn copy_line(rng: &mut ChaCha8Rng, target: usize, replacing: bool, used: &mut bool) -> String {
    let mut line = format!("           COPY BOOK{target}");
    if replacing && rng.gen_bool(0.7) {
        let mut pairs: Vec<&(&str, &str)> = VOCAB.iter().collect();
        pairs.shuffle(rng);
        let n = rng.gen_range(1..=2);
        let mut with = String::from(" REPLACING");
        for (from, to) in pairs.into_iter().take(n) {
            with.push_str(&format!(" =={from}== BY =={to}=="));
        }
        if line.len() + with.len() < 72 {
            line.push_str(&with);
            *used = true;
        }
    }
    line.push('.');
    line
}

/// A random acyclic copybook graph and a main program that includes it.
pub fn generate(seed: u64, replacing: bool) -> GeneratedFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_books = rng.gen_range(1..=MAX_BOOKS);
    let levels = rng.gen_range(1..=MAX_DEPTH.min(n_books));
    // Book i sits at level[i]; every level has at least one book.
    let mut level: Vec<usize> = (0..n_books)
        .map(|i| {
            if i < levels {
                i
            } else {
                rng.gen_range(0..levels)
            }
        })
        .collect();
    level.shuffle(&mut rng);
    let at = |l: usize, level: &[usize]| -> Vec<usize> {
        (0..level.len()).filter(|&i| level[i] == l).collect()
    };

    let mut uses_replacing = false;
    let mut books = BTreeMap::new();
    for b in 0..n_books {
        let mut lines = Vec::new();
        if rng.gen_bool(0.4) {
            lines.push(format!(
                "{}* COPY IN A COMMENT. BOOK{b}",
                seq_area(&mut rng, 1)
            ));
        }
        lines.push(format!("       01  :TAG:-REC-{b}."));
        let children = at(level[b] + 1, &level);
        for k in 0..rng.gen_range(1..=4) {
            lines.push(body_line(&mut rng, b, k));
            if !children.is_empty() && rng.gen_bool(0.5) {
                let c = *children.choose(&mut rng).unwrap();
                lines.push(copy_line(&mut rng, c, replacing, &mut uses_replacing));
            }
        }
        // Keep the chain through every level reachable.
        if let Some(&c) = children.first() {
            if !lines.iter().any(|l| l.contains("COPY BOOK")) {
                lines.push(copy_line(&mut rng, c, replacing, &mut uses_replacing));
            }
        }
        books.insert(format!("BOOK{b}"), lines.join("\n") + "\n");
    }

    let mut main = vec![
        "000100 IDENTIFICATION DIVISION.".to_string(),
        format!("000200 PROGRAM-ID. GEN{seed}."),
        "000300 DATA DIVISION.".to_string(),
        "000400 WORKING-STORAGE SECTION.".to_string(),
    ];
    for (n, root) in at(0, &level).into_iter().enumerate() {
        let seq = seq_area(&mut rng, 5 + n);
        let directive = copy_line(&mut rng, root, replacing, &mut uses_replacing);
        main.push(format!("{seq}{}", &directive[6..]));
        if rng.gen_bool(0.3) {
            main.push(format!("{seq}*    COPY BOOK{root}."));
        }
    }
    main.push("000900 PROCEDURE DIVISION.".to_string());
    main.push("001000     MOVE 1 TO FLD-A.".to_string());
    main.push("001100     STOP RUN.".to_string());

    let fixture = GeneratedFixture {
        seed,
        main: main.join("\n") + "\n",
        books,
        uses_replacing,
        depth: levels,
    };
    assert!(fixture.depth <= MAX_DEPTH && fixture.books.len() <= MAX_BOOKS);
    fixture
}

fn is_comment(line: &str) -> bool {
    matches!(line.chars().nth(6), Some('*' | '/'))
}

fn code_area(line: &str) -> String {
    line.chars().skip(7).take(65).collect()
}

struct Directive {
    name: String,
    pairs: Vec<(String, String)>,
}

fn directive(line: &str) -> Option<Directive> {
    static COPY: OnceLock<Regex> = OnceLock::new();
    static PAIR: OnceLock<Regex> = OnceLock::new();
    let copy = COPY.get_or_init(|| {
        Regex::new(
            r"^COPY\s+([A-Za-z0-9-]+)(?:\s+(?:OF|IN)\s+[A-Za-z0-9-]+)?(?:\s+REPLACING\s+(.*))?\.$",
        )
        .unwrap()
    });
    let pair = PAIR.get_or_init(|| Regex::new(r"==(.*?)==\s+BY\s+==(.*?)==").unwrap());
    let code = code_area(line);
    let caps = copy.captures(code.trim())?;
    let pairs = caps
        .get(2)
        .map(|m| {
            pair.captures_iter(m.as_str())
                .map(|c| {
                    let norm = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
                    (norm(&c[1]), norm(&c[2]))
                })
                .collect()
        })
        .unwrap_or_default();
    Some(Directive {
        name: caps[1].to_ascii_uppercase(),
        pairs,
    })
}

fn word(c: char) -> bool {
    c.is_alphanumeric() || c == '-' || c == '_'
}

fn pattern(from: &str) -> Regex {
    let tokens: Vec<String> = from.split(' ').map(regex::escape).collect();
    Regex::new(&format!("^{}", tokens.join(r"\s+"))).unwrap()
}

/// Compiled REPLACING pairs for [`replace_line`].
pub fn compile(pairs: &[(String, String)]) -> Vec<(Regex, &str, &str)> {
    pairs
        .iter()
        .map(|(from, to)| (pattern(from), from.as_str(), to.as_str()))
        .collect()
}

pub fn replace_line(line: &str, compiled: &[(Regex, &str, &str)]) -> String {
    let chars: Vec<(usize, char)> = line.char_indices().collect();
    // candidates[i] = (match length in bytes, replacement) of the first pair
    // matching at char i.
    let mut candidates: Vec<Option<(usize, &str)>> = vec![None; chars.len()];
    for (ci, &(bi, _)) in chars.iter().enumerate() {
        for (re, from, to) in compiled {
            let Some(m) = re.find(&line[bi..]) else {
                continue;
            };
            let first = from.chars().next().unwrap();
            let last = from.chars().last().unwrap();
            let before = ci.checked_sub(1).map(|p| chars[p].1);
            let after = line[bi + m.end()..].chars().next();
            if word(first) && before.is_some_and(word) {
                continue;
            }
            if word(last) && after.is_some_and(word) {
                continue;
            }
            candidates[ci] = Some((m.end(), to));
            break;
        }
    }
    let mut out = String::new();
    let mut ci = 0;
    while ci < chars.len() {
        let bi = chars[ci].0;
        match candidates[ci] {
            Some((len, to)) => {
                out.push_str(to);
                let end = bi + len;
                while ci < chars.len() && chars[ci].0 < end {
                    ci += 1;
                }
            }
            None => {
                out.push(chars[ci].1);
                ci += 1;
            }
        }
    }
    out
}

fn expand_lines(text: &str, books: &BTreeMap<String, String>) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        if is_comment(line) {
            continue;
        }
        match directive(line) {
            Some(d) => {
                let body = expand_lines(&books[&d.name], books);
                let compiled = compile(&d.pairs);
                out.extend(body.iter().map(|l| replace_line(l, &compiled)));
            }
            None => out.push(line.to_string()),
        }
    }
    out
}

/// Expected expansion of `main`, one `\n` after every line.
pub fn reference_expand(main: &str, books: &BTreeMap<String, String>) -> String {
    expand_lines(main, books)
        .into_iter()
        .map(|l| l + "\n")
        .collect()
}
