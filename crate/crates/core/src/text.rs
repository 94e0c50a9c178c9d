//! Shared text utilities: the numeric-preserving tokenizer used by the sparse
//! index, the mock embedder and ROUGE, plus small hashing helpers.

use sha2::{Digest, Sha256};

/// Lowercases and splits on anything that is not alphanumeric.
///
/// A `.` or `,` is kept when it sits between two digits, so `45.45`,
/// `23,913` and `0.1325` survive as single tokens while `2014.` at the end of
/// a sentence becomes `2014`.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
            continue;
        }
        let inside_digits = (c == '.' || c == ',')
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if inside_digits && !current.is_empty() {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Case- and whitespace-insensitive form used for claim comparison and dedup.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .trim_end_matches(['.', '!', '?', ';', ':'])
        .trim()
        .to_lowercase()
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Numeric tokens of a text, parsed as `f64` (thousands separators dropped).
pub fn numbers(text: &str) -> Vec<f64> {
    tokenize(text)
        .iter()
        .filter(|t| t.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .filter_map(|t| t.replace(',', "").parse::<f64>().ok())
        .collect()
}

/// Splits prose into sentences on `.`, `!` or `?` followed by whitespace (or
/// the end of text) and on line breaks. Terminal punctuation is dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        let boundary = match c {
            '\n' => true,
            '.' | '!' | '?' => chars.peek().is_none_or(|n| n.is_whitespace()),
            _ => false,
        };
        if boundary {
            let s = current.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            current.clear();
        } else {
            current.push(c);
        }
    }
    let s = current.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_decimal_and_thousands_tokens() {
        assert_eq!(
            tokenize("Amortization was $23,913, $22,363 in 2014."),
            vec!["amortization", "was", "23,913", "22,363", "in", "2014"]
        );
        assert_eq!(
            tokenize("[45.45 -40.13]/40.13"),
            vec!["45.45", "40.13", "40.13"]
        );
    }

    #[test]
    fn lowercases_and_splits_punctuation() {
        assert_eq!(
            tokenize("Fair-Value per SHARE"),
            vec!["fair", "value", "per", "share"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn dot_between_letters_splits() {
        assert_eq!(tokenize("e.g. U.S"), vec!["e", "g", "u", "s"]);
    }

    #[test]
    fn normalize_collapses() {
        assert_eq!(normalize("  Revenue   grew 5%. "), "revenue grew 5%");
    }

    #[test]
    fn sentences_split_on_terminal_punctuation() {
        assert_eq!(split_sentences("A. B."), vec!["A", "B"]);
        assert_eq!(
            split_sentences("Growth was 0.1325 or 13.25%. Done!\nNext line"),
            vec!["Growth was 0.1325 or 13.25%", "Done", "Next line"]
        );
        assert!(split_sentences("  ").is_empty());
    }

    #[test]
    fn numbers_parse() {
        assert_eq!(
            numbers("13.25% vs 13.30% and 23,913"),
            vec![13.25, 13.3, 23913.0]
        );
    }
}
