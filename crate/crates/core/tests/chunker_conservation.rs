//! Conservation property for the evidence chunker over random
//! multi-paragraph texts: no sentence lost, none duplicated, no
//! non-oversized chunk over the limit.

use proptest::prelude::*;

use pfme_core::retrieval::chunk_text;
use pfme_core::text::{split_sentences, token_count};

const TOPICS: &[&str] = &[
    "Harbor", "Winter", "Library", "Voyage", "Signal", "Garden", "Mirror", "Bridge",
];

fn paragraph() -> impl Strategy<Value = String> {
    prop::collection::vec(
        (prop::sample::select(TOPICS), 1usize..24).prop_map(|(topic, len)| {
            let mut words = vec![topic.to_string()];
            for i in 0..len {
                words.push(format!("word{i}"));
            }
            format!("{}.", words.join(" "))
        }),
        1..8,
    )
    .prop_map(|sentences| sentences.join(" "))
}

fn multi_paragraph_text() -> impl Strategy<Value = String> {
    prop::collection::vec(paragraph(), 1..5).prop_map(|ps| ps.join("\n\n"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conservation_at_document_chunk_size(text in multi_paragraph_text()) {
        check_conservation(&text, 600)?;
    }

    #[test]
    fn conservation_at_sentence_chunk_size(text in multi_paragraph_text()) {
        check_conservation(&text, 300)?;
    }

    #[test]
    fn conservation_at_tiny_sizes(text in multi_paragraph_text(), size in 1usize..40) {
        check_conservation(&text, size)?;
    }
}

fn check_conservation(text: &str, size: usize) -> Result<(), TestCaseError> {
    let chunks = chunk_text(text, size);
    let original = split_sentences(text).sentences;

    let mut recovered = Vec::new();
    for c in &chunks {
        recovered.extend(split_sentences(&c.text).sentences);
        prop_assert_eq!(token_count(&c.text), c.token_count);
        if !c.oversized {
            prop_assert!(
                c.token_count <= size,
                "chunk {} has {} tokens over limit {}",
                c.chunk_index,
                c.token_count,
                size
            );
        }
    }
    // Multiset equality; order preservation makes it plain equality.
    prop_assert_eq!(original, recovered);
    Ok(())
}
