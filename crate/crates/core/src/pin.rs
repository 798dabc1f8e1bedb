//! Exact-version checks shared by configuration, recipes and workflows.

/// Tags that name a moving target rather than a release.
const FLOATING_TAGS: &[&str] = &[
    "latest", "stable", "lts", "current", "edge", "main", "master", "head", "nightly", "release",
];

/// Whether `version` names exactly one release.
///
/// Floating tags, ranges (`^1.2`, `~1`, `>=2`), wildcards (`1.x`, `1.*`) and
/// blank strings are rejected.
pub fn is_exact(version: &str) -> bool {
    let v = version.trim();
    if v.is_empty() || v != version {
        return false;
    }
    if FLOATING_TAGS.iter().any(|t| v.eq_ignore_ascii_case(t)) {
        return false;
    }
    if v.starts_with(['^', '~', '>', '<', '=', '*']) || v.contains(char::is_whitespace) {
        return false;
    }
    !v.split(['.', '-', '_'])
        .any(|part| part == "*" || part.eq_ignore_ascii_case("x"))
}

/// Whether a CI action reference is an immutable pin: a full 40-character
/// commit SHA, or a complete `vMAJOR.MINOR.PATCH` release.
pub fn is_pinned_action_ref(reference: &str) -> bool {
    if reference.len() == 40 && reference.bytes().all(|b| b.is_ascii_hexdigit()) {
        return true;
    }
    let Some(semver) = reference.strip_prefix('v') else {
        return false;
    };
    let parts: alloc::vec::Vec<&str> = semver.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
}
