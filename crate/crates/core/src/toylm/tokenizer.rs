//! Byte-level vocabulary: ids `0..=255` are raw bytes, followed by three
//! reserved ids.

use super::LmError;

pub const BOS: u32 = 256;
pub const EOS: u32 = 257;
pub const PAD: u32 = 258;
/// Smallest vocabulary a model may use.
pub const BYTE_VOCAB: usize = 259;

pub fn is_reserved(token: u32) -> bool {
    token >= 256
}

/// `[BOS, bytes…, EOS]`.
pub fn tokenize(text: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(text.len() + 2);
    out.push(BOS);
    out.extend(text.iter().map(|&b| u32::from(b)));
    out.push(EOS);
    out
}

/// `[BOS, bytes…]`, the form a prompt takes before decoding.
pub fn encode_prompt(text: &[u8]) -> Vec<u32> {
    let mut out = Vec::with_capacity(text.len() + 1);
    out.push(BOS);
    out.extend(text.iter().map(|&b| u32::from(b)));
    out
}

/// Raw byte tokens without any framing.
pub fn encode_bytes(text: &[u8]) -> Vec<u32> {
    text.iter().map(|&b| u32::from(b)).collect()
}

/// Inverse of [`tokenize`]. A leading BOS and a trailing EOS are dropped;
/// any other reserved token is an error.
pub fn detokenize(tokens: &[u32]) -> Result<Vec<u8>, LmError> {
    let start = usize::from(tokens.first() == Some(&BOS));
    let mut end = tokens.len();
    if end > start && tokens[end - 1] == EOS {
        end -= 1;
    }
    tokens[start..end]
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if is_reserved(t) {
                Err(LmError::ReservedToken {
                    position: start + i,
                    token: t,
                })
            } else {
                Ok(t as u8)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_round_trip() {
        assert_eq!(tokenize(b""), vec![BOS, EOS]);
        assert_eq!(detokenize(&[BOS, EOS]).unwrap(), b"");
    }

    #[test]
    fn bytes_map_to_themselves() {
        assert_eq!(tokenize(b"ab"), vec![BOS, 97, 98, EOS]);
    }

    #[test]
    fn reserved_tokens_inside_are_rejected() {
        let err = detokenize(&[BOS, 97, PAD, 98, EOS]).unwrap_err();
        assert!(matches!(err, LmError::ReservedToken { position: 2, token: PAD }));
        assert!(detokenize(&[97, BOS]).is_err());
        assert!(detokenize(&[97, 1000]).is_err());
    }

    proptest! {
        #[test]
        fn kibibyte_strings_round_trip(bytes in proptest::collection::vec(any::<u8>(), 1024)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)).unwrap(), bytes);
        }

        #[test]
        fn short_strings_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(detokenize(&tokenize(&bytes)).unwrap(), bytes);
        }
    }
}
