/// Splits text into word and punctuation tokens, keeping the source case.
///
/// Runs of alphanumeric characters form words; an apostrophe inside a word
/// starts a clitic token (`it's` → `it`, `'s`); every other non-space
/// character is a token of its own.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    let flush = |current: &mut String, out: &mut Vec<String>| {
        if !current.is_empty() {
            out.push(std::mem::take(current));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            flush(&mut current, &mut out);
            current.push('\'');
        } else {
            flush(&mut current, &mut out);
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
    }
    flush(&mut current, &mut out);
    out
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased word-level tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    split_tokens(text).into_iter().map(|t| t.to_lowercase()).collect()
}
