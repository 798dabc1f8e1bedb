//! Stand-in COBOL compiler and unit-test runner for hermetic pipelines.
//!
//! Usage: `cblpipe-mockcc SOURCE [TEST] [--OPTION VALUE ...]`
//!
//! "Compiling" checks that the source has IDENTIFICATION and PROCEDURE
//! divisions and no COPY left, then counts lines and sentences. A test
//! file holds one check per line:
//!
//! ```text
//! EXPECT <text>   the source must contain <text>
//! WARN <message>  report a warning
//! # comment
//! ```
//!
//! Exit codes: 0 pass, 1 compile or test failure, 2 usage, 4 passed with
//! warnings. Options are echoed so callers can see what was passed.

use std::process::ExitCode;

fn code_area(line: &str) -> String {
    line.chars().skip(7).take(65).collect()
}

fn is_comment(line: &str) -> bool {
    matches!(line.chars().nth(6), Some('*' | '/'))
}

fn compile(path: &str, text: &str) -> Result<(usize, usize), String> {
    let code: Vec<String> = text
        .lines()
        .filter(|l| !is_comment(l))
        .map(code_area)
        .collect();
    let upper: Vec<String> = code.iter().map(|l| l.to_ascii_uppercase()).collect();
    for division in ["IDENTIFICATION DIVISION", "PROCEDURE DIVISION"] {
        if !upper.iter().any(|l| l.contains(division)) {
            return Err(format!("{path}: missing {division}"));
        }
    }
    if let Some(n) = upper
        .iter()
        .position(|l| l.split_whitespace().next() == Some("COPY"))
    {
        return Err(format!("{path}:{}: unexpanded COPY directive", n + 1));
    }
    let sentences = code
        .iter()
        .map(|l| l.trim_end())
        .filter(|l| l.ends_with('.'))
        .count();
    Ok((code.len(), sentences))
}

fn main() -> ExitCode {
    let mut positional = Vec::new();
    let mut options = Vec::new();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        if a.starts_with("--") {
            let value = args.next().unwrap_or_default();
            options.push((a, value));
        } else {
            positional.push(a);
        }
    }
    let Some(source) = positional.first() else {
        eprintln!("usage: cblpipe-mockcc SOURCE [TEST] [--OPTION VALUE ...]");
        return ExitCode::from(2);
    };
    for (k, v) in &options {
        println!("mockcc: option {k} {v}");
    }

    let text = match std::fs::read_to_string(source) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mockcc: cannot read {source}: {e}");
            return ExitCode::from(2);
        }
    };
    match compile(source, &text) {
        Ok((lines, sentences)) => {
            println!("mockcc: compiled {source}: {lines} lines, {sentences} sentences")
        }
        Err(msg) => {
            eprintln!("mockcc: error: {msg}");
            return ExitCode::from(1);
        }
    }

    let Some(test) = positional.get(1) else {
        return ExitCode::SUCCESS;
    };
    let checks = match std::fs::read_to_string(test) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("mockcc: cannot read {test}: {e}");
            return ExitCode::from(2);
        }
    };
    let mut failed = 0;
    let mut warned = 0;
    for (n, line) in checks.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(want) = line.strip_prefix("EXPECT ") {
            if text.contains(want) {
                println!("mockcc: ok {want}");
            } else {
                eprintln!("mockcc: FAIL {test}:{}: expected {want:?}", n + 1);
                failed += 1;
            }
        } else if let Some(msg) = line.strip_prefix("WARN ") {
            println!("mockcc: warning {msg}");
            warned += 1;
        } else {
            eprintln!("mockcc: {test}:{}: unknown check {line:?}", n + 1);
            return ExitCode::from(2);
        }
    }
    if failed > 0 {
        ExitCode::from(1)
    } else if warned > 0 {
        ExitCode::from(4)
    } else {
        ExitCode::SUCCESS
    }
}
