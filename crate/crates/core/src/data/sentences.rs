/// Tokens that end in a period without ending a sentence. Lowercased,
/// without the trailing period. Changing this list changes prepared data.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "approx", "inc", "ltd", "co", "no", "fig", "u.s", "min",
    "max", "in", "ft", "lb", "lbs", "oz", "mm", "cm",
];
pub const ABBREVIATION_LIST_VERSION: u32 = 1;

/// Splits review text on `.`, `!` or `?` followed by whitespace or the end
/// of the text. A period after a known abbreviation or a single letter is not
/// a boundary, and neither is a period inside a number. Empty fragments are
/// dropped and sentences are trimmed.
pub fn split_review_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '!' | '?') {
            // absorb runs like "?!" or "..."
            let mut end = i + 1;
            while end < chars.len() && matches!(chars[end], '.' | '!' | '?') {
                end += 1;
            }
            let at_boundary = end == chars.len() || chars[end].is_whitespace();
            if at_boundary && !(c == '.' && end == i + 1 && is_abbreviation(&chars[start..i])) {
                push_trimmed(&mut out, &chars[start..end]);
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    push_trimmed(&mut out, &chars[start..]);
    out
}

fn is_abbreviation(before: &[char]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect::<String>()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if word.is_empty() {
        return false;
    }
    (word.chars().count() == 1 && word.chars().all(char::is_alphabetic)) || ABBREVIATIONS.contains(&word.as_str())
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if s.chars().any(char::is_alphanumeric) {
        out.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_splits() {
        assert_eq!(
            split_review_sentences("Works well. Even with a case."),
            ["Works well.", "Even with a case."]
        );
        assert!(split_review_sentences("").is_empty());
        assert_eq!(split_review_sentences("It cost $5.99 today!"), ["It cost $5.99 today!"]);
    }

    #[test]
    fn abbreviations_and_runs() {
        assert_eq!(
            split_review_sentences("Ask Dr. Smith about it. Great?! Yes"),
            ["Ask Dr. Smith about it.", "Great?!", "Yes"]
        );
        assert_eq!(split_review_sentences("Made in the U.S. by hand."), ["Made in the U.S. by hand."]);
        assert_eq!(split_review_sentences("Wait... what"), ["Wait...", "what"]);
        assert!(split_review_sentences(" . ! ").is_empty());
    }
}
