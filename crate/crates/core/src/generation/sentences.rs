/// Sentence cap applied to every completion.
pub const DEFAULT_MAX_SENTENCES: usize = 3;

// Tokens that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "Sr.", "Jr.", "St.", "Mt.", "Rev.", "Gen.", "Lt.",
    "Col.", "Sgt.", "Capt.", "Gov.", "Sen.", "Rep.", "vs.", "e.g.", "i.e.", "U.S.", "U.K.", "a.m.",
    "p.m.", "No.", "Inc.", "Ltd.", "Co.",
];

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

fn is_abbreviation(candidate: &str) -> bool {
    let last = candidate.split_whitespace().last().unwrap_or("");
    let last = last.trim_start_matches(['(', '[', '"', '\'', '\u{201c}', '\u{2018}']);
    ABBREVIATIONS.contains(&last)
}

/// Splits `prompt_text + raw_text` into complete sentences.
///
/// A sentence ends at `.`, `!` or `?` (plus any run of terminators and
/// closing quotes or brackets) followed by whitespace or the end of the
/// text, unless the period closes a known abbreviation. A trailing fragment
/// without a terminator is dropped. At most `max_sentences` are returned.
pub fn split_sentences(prompt_text: &str, raw_text: &str, max_sentences: usize) -> Vec<String> {
    let text = format!("{prompt_text}{raw_text}");
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() && out.len() < max_sentences {
        let (_, c) = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len()
            && (TERMINATORS.contains(&chars[j].1) || CLOSERS.contains(&chars[j].1))
        {
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
        let boundary = j == chars.len() || chars[j].1.is_whitespace();
        if boundary {
            let candidate = text[start..end].trim();
            let guarded = c == '.' && j == i + 1 && is_abbreviation(candidate);
            if !guarded {
                if candidate.chars().any(char::is_alphanumeric) {
                    out.push(candidate.to_string());
                }
                start = end;
            }
        }
        i = j;
    }
    out
}
