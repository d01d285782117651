use proptest::prelude::*;

use endorse_abstractor::checkpoint::{decode_values, encode_values};
use endorse_abstractor::Vocab;

proptest! {
    #[test]
    fn parameter_bytes_round_trip(bits in proptest::collection::vec(any::<u64>(), 0..64)) {
        let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
        let back = decode_values(&encode_values(&values)).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in back.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn in_vocabulary_words_round_trip(words in proptest::collection::vec("[a-e]{1,2}", 1..40)) {
        let vocab = Vocab::build(words.iter().map(String::as_str), 100);
        prop_assert_eq!(vocab.decode(&vocab.encode(&words)), words);
    }
}

#[test]
fn truncated_parameters_are_rejected() {
    let text = encode_values(&[1.0, 2.0]);
    let short = base64_of(&[0u8; 12]);
    assert!(decode_values(&short).is_err());
    assert!(decode_values("not base64!").is_err());
    assert_eq!(decode_values(&text).unwrap(), vec![1.0, 2.0]);
}

fn base64_of(bytes: &[u8]) -> String {
    use base64::Engine;
    base64::engine::general_purpose::STANDARD.encode(bytes)
}
