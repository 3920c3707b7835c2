/// Lowercases `text` and splits it on every maximal run of
/// non-alphanumeric characters. Unicode letters and digits count as
/// alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    // lowercase first: some lowercase expansions contain combining marks
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_and_lowercases() {
        assert_eq!(tokenize("The cat, sat."), ["the", "cat", "sat"]);
        assert_eq!(
            tokenize("BM25-based re-ranking"),
            ["bm25", "based", "re", "ranking"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize(" ,;- ").is_empty());
    }

    #[test]
    fn unicode_letters_are_alphanumeric() {
        assert_eq!(
            tokenize("Café São-Paulo ２０"),
            ["café", "são", "paulo", "２０"]
        );
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
