//! Character-level text rules shared by the linker, the tokenizer and the
//! metrics. All offsets are Unicode scalar values.

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_mention(text: &str) -> String {
    let lower = text.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Single-character lowercase mapping; characters whose lowercase form
/// expands to several characters map to themselves so lengths are preserved.
pub(crate) fn lower_char(c: char) -> char {
    let mut it = c.to_lowercase();
    match (it.next(), it.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Maximal runs of alphanumeric characters as half-open char ranges.
pub(crate) fn word_runs(chars: &[char]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            runs.push((start, i));
        } else {
            i += 1;
        }
    }
    runs
}

/// Non-overlapping, left-to-right, case-insensitive occurrences of `needle`.
pub(crate) fn case_insensitive_occurrences(haystack: &[char], needle: &str) -> Vec<(usize, usize)> {
    let target: Vec<char> = needle.chars().map(lower_char).collect();
    let n = target.len();
    let mut out = Vec::new();
    if n == 0 || haystack.len() < n {
        return out;
    }
    let lowered: Vec<char> = haystack.iter().copied().map(lower_char).collect();
    let mut i = 0;
    while i + n <= lowered.len() {
        if lowered[i..i + n] == target[..] {
            out.push((i, i + n));
            i += n;
        } else {
            i += 1;
        }
    }
    out
}
