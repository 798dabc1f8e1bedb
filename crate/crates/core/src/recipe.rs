//! Container recipe generation and size lint.
//!
//! The lint rules encode the image-minimization steps that paid off when
//! slimming the pipeline image:
//!
//! | rule | check                                         | step |
//! |------|-----------------------------------------------|------|
//! | R1   | base image is not a minimal distribution      | 2    |
//! | R2   | package cache not purged in the same `RUN`    | 6    |
//! | R3   | more than two consecutive `RUN` instructions  | 5    |
//! | R4   | build dependencies installed but never removed| 7    |
//! | R5   | JS package-manager cache not cleaned          | 11   |
//! | R6   | unpinned base image or package version        | -    |
//!
//! The generator emits recipes that satisfy all six rules.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::pin::is_exact;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstallMethod {
    /// Alpine package.
    #[default]
    Apk,
    /// Global npm package.
    Npm,
    /// Already present in the base image; only verified.
    Base,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinnedPackage {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencySpec {
    pub name: String,
    pub version: String,
    /// argv that prints the tool's version.
    pub version_cmd: Vec<String>,
    /// Substring the version output must contain.
    pub expected_pattern: String,
    #[serde(default)]
    pub install: InstallMethod,
    /// Package name when it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub package: Option<String>,
    /// Packages needed only while installing this dependency.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub build_deps: Vec<PinnedPackage>,
}

impl DependencySpec {
    pub fn package_name(&self) -> &str {
        self.package.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipeText {
    pub base_image: String,
    pub lines: Vec<String>,
}

impl RecipeText {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, RecipeError> {
        let instructions = parse_instructions(text)?;
        let base_image = instructions
            .iter()
            .find(|i| i.keyword == Keyword::From)
            .map(|i| from_image(&i.args).to_string())
            .unwrap_or_default();
        Ok(Self {
            base_image,
            lines: text.lines().map(ToString::to_string).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecipeError {
    #[error("no dependencies given")]
    NoDependencies,
    #[error("dependency {name} has unpinned version {version:?}")]
    UnpinnedDependency { name: String, version: String },
    #[error("base image {0:?} is not pinned to an exact tag")]
    UnpinnedBase(String),
    #[error("base image {0:?} is not a minimal distribution")]
    NonMinimalBase(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    R6,
}

impl Rule {
    pub const ALL: [Rule; 6] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6];

    /// The image-minimization step this rule was distilled from.
    pub fn reduction_step(self) -> Option<u8> {
        match self {
            Rule::R1 => Some(2),
            Rule::R2 => Some(6),
            Rule::R3 => Some(5),
            Rule::R4 => Some(7),
            Rule::R5 => Some(11),
            Rule::R6 => None,
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Rule::R1 => "use a minimal (alpine-based) base image",
            Rule::R2 => "purge the package cache in the instruction that fills it",
            Rule::R3 => "merge consecutive RUN instructions",
            Rule::R4 => "remove build dependencies after use",
            Rule::R5 => "clean the npm/yarn cache after installing",
            Rule::R6 => "pin every base image and package to an exact version",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LintFinding {
    /// 1-based line where the offending instruction starts.
    pub line: usize,
    pub rule_id: Rule,
    pub message: String,
    pub reduction_step: Option<u8>,
}

impl fmt::Display for LintFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {} {}", self.line, self.rule_id, self.message)?;
        if let Some(step) = self.reduction_step {
            write!(f, " (size-reduction step {step})")?;
        }
        Ok(())
    }
}

const VIRTUAL_BUILD_GROUP: &str = ".build-deps";
const APK_CACHE: &str = "/var/cache/apk";
const APT_LISTS: &str = "/var/lib/apt/lists";

/// Packages that are only needed to build things.
const BUILD_PACKAGES: &[&str] = &[
    "build-base",
    "build-essential",
    "gcc",
    "g++",
    "make",
    "cmake",
    "musl-dev",
    "libc-dev",
    "linux-headers",
    "autoconf",
    "automake",
    "libtool",
    "python3-dev",
];

/// Builds a single-stage recipe that installs `deps` on `base`.
///
/// All package installs share one `RUN` instruction, the apk cache is never
/// written, build dependencies go into a virtual group that is deleted in
/// the same instruction and the npm cache is cleaned right after installs.
pub fn generate_recipe(deps: &[DependencySpec], base: &str) -> Result<RecipeText, RecipeError> {
    if deps.is_empty() {
        return Err(RecipeError::NoDependencies);
    }
    for dep in deps {
        if !is_exact(&dep.version) {
            return Err(RecipeError::UnpinnedDependency {
                name: dep.name.clone(),
                version: dep.version.clone(),
            });
        }
        for bd in &dep.build_deps {
            if !is_exact(&bd.version) {
                return Err(RecipeError::UnpinnedDependency {
                    name: bd.name.clone(),
                    version: bd.version.clone(),
                });
            }
        }
    }
    let image = ImageRef::parse(base);
    if !image.is_pinned() {
        return Err(RecipeError::UnpinnedBase(base.to_string()));
    }
    if !image.is_minimal() {
        return Err(RecipeError::NonMinimalBase(base.to_string()));
    }

    let mut apk = Vec::new();
    let mut npm = Vec::new();
    let mut build = Vec::new();
    for dep in deps {
        match dep.install {
            InstallMethod::Apk => apk.push(format!("{}={}", dep.package_name(), dep.version)),
            InstallMethod::Npm => npm.push(format!("{}@{}", dep.package_name(), dep.version)),
            InstallMethod::Base => {}
        }
        for bd in &dep.build_deps {
            let pkg = format!("{}={}", bd.name, bd.version);
            if !build.contains(&pkg) {
                build.push(pkg);
            }
        }
    }

    let mut steps: Vec<String> = Vec::new();
    if !apk.is_empty() {
        steps.push(format!("apk add --no-cache {}", apk.join(" ")));
    }
    if !build.is_empty() {
        steps.push(format!(
            "apk add --no-cache --virtual {VIRTUAL_BUILD_GROUP} {}",
            build.join(" ")
        ));
    }
    if !npm.is_empty() {
        steps.push(format!("npm install -g {}", npm.join(" ")));
        steps.push("npm cache clean --force".to_owned());
    }
    if !build.is_empty() {
        steps.push(format!("apk del {VIRTUAL_BUILD_GROUP}"));
    }
    if !steps.is_empty() {
        steps.push(format!("rm -rf {APK_CACHE}/* /tmp/*"));
    }

    let mut lines = alloc::vec![
        "# Generated by cblpipe; every version below is pinned.".to_owned(),
        format!("FROM {base}"),
    ];
    if let Some((first, rest)) = steps.split_first() {
        let mut run = format!("RUN {first}");
        for step in rest {
            run.push_str(" \\");
            lines.push(run);
            run = format!("    && {step}");
        }
        lines.push(run);
    }
    lines.push("ENTRYPOINT [\"cblpipe\"]".to_owned());
    Ok(RecipeText {
        base_image: base.to_string(),
        lines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Keyword {
    From,
    Run,
    Copy,
    Env,
    Entrypoint,
}

#[derive(Debug, Clone)]
struct Instruction {
    line: usize,
    keyword: Keyword,
    args: String,
}

fn parse_instructions(text: &str) -> Result<Vec<Instruction>, RecipeError> {
    let mut out: Vec<Instruction> = Vec::new();
    let mut pending: Option<Instruction> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if let Some(ins) = pending.as_mut() {
            if trimmed.starts_with('#') {
                continue;
            }
            let (body, continues) = split_continuation(trimmed);
            ins.args.push(' ');
            ins.args.push_str(body);
            if !continues {
                out.extend(pending.take());
            }
            continue;
        }
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (word, rest) = trimmed
            .split_once(char::is_whitespace)
            .unwrap_or((trimmed, ""));
        let keyword = match word.to_ascii_uppercase().as_str() {
            "FROM" => Keyword::From,
            "RUN" => Keyword::Run,
            "COPY" => Keyword::Copy,
            "ENV" => Keyword::Env,
            "ENTRYPOINT" => Keyword::Entrypoint,
            other => {
                return Err(RecipeError::Parse {
                    line: line_no,
                    message: format!("unsupported instruction {other}"),
                })
            }
        };
        if out.is_empty() && pending.is_none() && keyword != Keyword::From {
            return Err(RecipeError::Parse {
                line: line_no,
                message: "recipe must start with FROM".into(),
            });
        }
        let (body, continues) = split_continuation(rest.trim());
        let ins = Instruction {
            line: line_no,
            keyword,
            args: body.to_string(),
        };
        if continues {
            pending = Some(ins);
        } else {
            out.push(ins);
        }
    }
    out.extend(pending);
    if out.is_empty() {
        return Err(RecipeError::Parse {
            line: 0,
            message: "empty recipe".into(),
        });
    }
    Ok(out)
}

fn split_continuation(s: &str) -> (&str, bool) {
    match s.strip_suffix('\\') {
        Some(body) => (body.trim_end(), true),
        None => (s, false),
    }
}

fn from_image(args: &str) -> &str {
    args.split_whitespace()
        .find(|w| !w.starts_with("--"))
        .unwrap_or("")
}

fn from_alias(args: &str) -> Option<String> {
    let words: Vec<&str> = args.split_whitespace().collect();
    words
        .iter()
        .position(|w| w.eq_ignore_ascii_case("AS"))
        .and_then(|i| words.get(i + 1))
        .map(|w| w.to_ascii_lowercase())
}

struct ImageRef<'a> {
    repository: &'a str,
    tag: Option<&'a str>,
    digest: bool,
}

impl<'a> ImageRef<'a> {
    fn parse(reference: &'a str) -> Self {
        let (rest, digest) = match reference.split_once('@') {
            Some((r, _)) => (r, true),
            None => (reference, false),
        };
        // A colon after the last slash separates the tag; earlier ones
        // belong to a registry port.
        let slash = rest.rfind('/').map_or(0, |i| i + 1);
        match rest[slash..].rfind(':') {
            Some(i) => Self {
                repository: &rest[..slash + i],
                tag: Some(&rest[slash + i + 1..]),
                digest,
            },
            None => Self {
                repository: rest,
                tag: None,
                digest,
            },
        }
    }

    fn name(&self) -> &str {
        self.repository
            .rsplit('/')
            .next()
            .unwrap_or(self.repository)
    }

    fn is_pinned(&self) -> bool {
        self.digest || self.tag.is_some_and(is_exact)
    }

    fn is_minimal(&self) -> bool {
        let name = self.name().to_ascii_lowercase();
        let tag = self.tag.unwrap_or("").to_ascii_lowercase();
        name == "alpine"
            || name == "busybox"
            || name == "scratch"
            || self.repository.contains("distroless")
            || tag.contains("alpine")
    }
}

/// What one `RUN` instruction does, as far as the rules care.
#[derive(Default)]
struct RunFacts {
    apk_installs: bool,
    apk_no_cache: bool,
    apk_cache_removed: bool,
    apt_installs: bool,
    apt_lists_removed: bool,
    unpinned: Vec<String>,
    build_installed: Vec<String>,
    removed: Vec<String>,
    js_install_positions: Vec<usize>,
    js_clean_positions: Vec<usize>,
}

fn analyze_run(args: &str) -> RunFacts {
    let mut facts = RunFacts::default();
    let commands = args
        .split("&&")
        .flat_map(|c| c.split(';'))
        .flat_map(|c| c.split("||"));
    for (pos, command) in commands.enumerate() {
        let words: Vec<&str> = command.split_whitespace().collect();
        match words.as_slice() {
            ["apk", "add", rest @ ..] => {
                facts.apk_installs = true;
                let mut virtual_group = None;
                let mut packages = Vec::new();
                let mut it = rest.iter();
                while let Some(w) = it.next() {
                    match *w {
                        "--no-cache" => facts.apk_no_cache = true,
                        "--virtual" | "-t" => virtual_group = it.next().copied(),
                        w if w.starts_with('-') => {}
                        w => packages.push(w),
                    }
                }
                for pkg in &packages {
                    let name = pkg.split('=').next().unwrap_or(pkg);
                    if !pkg.contains('=') || !is_exact(&pkg[name.len() + 1..]) {
                        facts.unpinned.push((*pkg).to_string());
                    }
                    if virtual_group.is_none() && BUILD_PACKAGES.contains(&name) {
                        facts.build_installed.push(name.to_string());
                    }
                }
                if let Some(group) = virtual_group {
                    facts.build_installed.push(group.to_string());
                }
            }
            ["apk", "del", rest @ ..] => {
                facts.removed.extend(
                    rest.iter()
                        .filter(|w| !w.starts_with('-'))
                        .map(|w| w.to_string()),
                );
            }
            [apt, "install", rest @ ..] if *apt == "apt-get" || *apt == "apt" => {
                facts.apt_installs = true;
                for pkg in rest.iter().filter(|w| !w.starts_with('-')) {
                    let name = pkg.split('=').next().unwrap_or(pkg);
                    if !pkg.contains('=') {
                        facts.unpinned.push((*pkg).to_string());
                    }
                    if BUILD_PACKAGES.contains(&name) {
                        facts.build_installed.push(name.to_string());
                    }
                }
            }
            [apt, verb, rest @ ..]
                if (*apt == "apt-get" || *apt == "apt")
                    && (*verb == "purge" || *verb == "remove") =>
            {
                facts.removed.extend(
                    rest.iter()
                        .filter(|w| !w.starts_with('-'))
                        .map(|w| w.to_string()),
                );
            }
            ["rm", rest @ ..] => {
                for w in rest {
                    if w.starts_with(APK_CACHE) {
                        facts.apk_cache_removed = true;
                    }
                    if w.starts_with(APT_LISTS) {
                        facts.apt_lists_removed = true;
                    }
                }
            }
            ["npm", verb, rest @ ..] if matches!(*verb, "install" | "i" | "ci" | "add") => {
                facts.js_install_positions.push(pos);
                for pkg in rest.iter().filter(|w| !w.starts_with('-')) {
                    if !npm_pinned(pkg) {
                        facts.unpinned.push((*pkg).to_string());
                    }
                }
            }
            ["yarn", "global", "add", rest @ ..] | ["yarn", "add", rest @ ..] => {
                facts.js_install_positions.push(pos);
                for pkg in rest.iter().filter(|w| !w.starts_with('-')) {
                    if !npm_pinned(pkg) {
                        facts.unpinned.push((*pkg).to_string());
                    }
                }
            }
            ["yarn"] | ["yarn", "install", ..] => facts.js_install_positions.push(pos),
            ["npm", "cache", "clean", ..] | ["yarn", "cache", "clean", ..] => {
                facts.js_clean_positions.push(pos)
            }
            _ => {}
        }
    }
    facts
}

fn npm_pinned(spec: &str) -> bool {
    if spec.starts_with('.') || spec.starts_with('/') || spec.ends_with(".tgz") {
        return true;
    }
    let body = spec.strip_prefix('@').unwrap_or(spec);
    match body.rsplit_once('@') {
        Some((_, version)) => is_exact(version),
        None => false,
    }
}

/// Checks a recipe against rules R1-R6.
///
/// Findings come back sorted by line, then rule.
pub fn lint_recipe(recipe: &RecipeText) -> Result<Vec<LintFinding>, RecipeError> {
    let instructions = parse_instructions(&recipe.render())?;
    let mut findings = Vec::new();
    let mut finding = |line: usize, rule: Rule, message: String| {
        findings.push(LintFinding {
            line,
            rule_id: rule,
            message,
            reduction_step: rule.reduction_step(),
        })
    };

    let mut aliases: BTreeSet<String> = BTreeSet::new();
    let mut run_streak = 0usize;
    let facts: Vec<Option<RunFacts>> = instructions
        .iter()
        .map(|i| (i.keyword == Keyword::Run).then(|| analyze_run(&i.args)))
        .collect();

    for (idx, ins) in instructions.iter().enumerate() {
        if ins.keyword == Keyword::Run {
            run_streak += 1;
            if run_streak > 2 {
                finding(
                    ins.line,
                    Rule::R3,
                    format!(
                        "RUN instruction #{run_streak} in a row; merge it into the previous one"
                    ),
                );
            }
        } else {
            run_streak = 0;
        }

        match ins.keyword {
            Keyword::From => {
                let reference = from_image(&ins.args);
                let image = ImageRef::parse(reference);
                let is_stage_ref = aliases.contains(&reference.to_ascii_lowercase());
                if let Some(alias) = from_alias(&ins.args) {
                    aliases.insert(alias);
                }
                if is_stage_ref || image.name().eq_ignore_ascii_case("scratch") {
                    continue;
                }
                if !image.is_minimal() {
                    finding(
                        ins.line,
                        Rule::R1,
                        format!("base image {reference} is not a minimal distribution; prefer an alpine variant"),
                    );
                }
                if !image.is_pinned() {
                    finding(
                        ins.line,
                        Rule::R6,
                        format!("base image {reference} is not pinned to an exact tag or digest"),
                    );
                }
            }
            Keyword::Env => {
                let floating: Vec<&str> = ins
                    .args
                    .split_whitespace()
                    .filter_map(|kv| kv.split_once('='))
                    .filter(|(k, v)| k.to_ascii_uppercase().ends_with("_VERSION") && !is_exact(v))
                    .map(|(k, _)| k)
                    .collect();
                if !floating.is_empty() {
                    finding(
                        ins.line,
                        Rule::R6,
                        format!("floating version in {}", floating.join(", ")),
                    );
                }
            }
            Keyword::Run => {
                let Some(f) = &facts[idx] else { continue };
                if (f.apk_installs && !f.apk_no_cache && !f.apk_cache_removed)
                    || (f.apt_installs && !f.apt_lists_removed)
                {
                    finding(
                        ins.line,
                        Rule::R2,
                        "package cache is left in the layer; use --no-cache or remove it in the same RUN".into(),
                    );
                }
                let later_removed: BTreeSet<&str> = facts[idx..]
                    .iter()
                    .flatten()
                    .flat_map(|f| f.removed.iter().map(String::as_str))
                    .collect();
                let kept: Vec<&str> = f
                    .build_installed
                    .iter()
                    .map(String::as_str)
                    .filter(|p| !later_removed.contains(p))
                    .collect();
                if !kept.is_empty() {
                    finding(
                        ins.line,
                        Rule::R4,
                        format!("build dependencies never removed: {}", kept.join(", ")),
                    );
                }
                let uncleaned = f
                    .js_install_positions
                    .iter()
                    .any(|&p| !f.js_clean_positions.iter().any(|&c| c > p));
                if uncleaned {
                    finding(
                        ins.line,
                        Rule::R5,
                        "package-manager cache not cleaned after install in the same RUN".into(),
                    );
                }
                if !f.unpinned.is_empty() {
                    finding(
                        ins.line,
                        Rule::R6,
                        format!("unpinned packages: {}", f.unpinned.join(", ")),
                    );
                }
            }
            Keyword::Copy | Keyword::Entrypoint => {}
        }
    }
    findings.sort();
    Ok(findings)
}
