use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use alien_core::bijection::{build_key, BuildConfig};
use alien_core::translator::{read_id_stream, write_id_stream, AlienInput};
use alien_core::vocab::{detokenize, reference_tokenize};
use alien_core::{synth, BijectionKey, EmbeddingStore, Error, TokenId, TokenSequence, Translator, Vocabulary};

fn setup(rho: f64) -> (Vocabulary, BijectionKey) {
    let vocab = synth::byte_complete_vocab(900, 7).unwrap();
    let store = synth::clustered_embeddings(900, 16, 12, 0.8, 8).unwrap();
    let key = build_key(&vocab, &store, &BuildConfig { rho, seed: 3, ..Default::default() }).unwrap();
    (vocab, key)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn id_round_trip(ids in proptest::collection::vec(0u32..900, 0..200), rho in 0.0f64..=1.0) {
        let (vocab, key) = setup(rho);
        let t = Translator::new(&key, &vocab).unwrap();
        let enc = t.encode_ids(&ids).unwrap();
        prop_assert_eq!(enc.len(), ids.len());
        prop_assert_eq!(t.decode_ids(&enc).unwrap().0, ids.clone());
        // the key is an involution, so encoding twice is the identity too
        prop_assert_eq!(t.encode_ids(&enc).unwrap().0, ids);
    }

    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let (vocab, key) = setup(1.0);
        let t = Translator::new(&key, &vocab).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = synth::random_text(300, &mut rng);
        let doc = t.encode_text(&x, false).unwrap();
        prop_assert_eq!(t.decode_text(AlienInput::Document(&doc)).unwrap(), x.clone());
        let tr = t.encode_for_transport(&x, false, true).unwrap();
        prop_assert_eq!(t.decode_transport(&tr.bytes).unwrap(), x.clone());
        if tr.as_text {
            prop_assert!(std::str::from_utf8(&tr.bytes).is_ok());
        }
        if doc.retokenization_safe {
            let rendered = doc.rendered.unwrap();
            prop_assert_eq!(t.decode_text(AlienInput::Text(&rendered)).unwrap(), x);
        } else {
            let strict = t.encode_text(&x, true);
            prop_assert!(matches!(strict, Err(Error::Stability { .. })), "strict mode accepted an unsafe rendering");
        }
    }

    #[test]
    fn tokenizer_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
        let vocab = synth::byte_complete_vocab(600, 2).unwrap();
        let ids = reference_tokenize(&bytes, &vocab).unwrap();
        prop_assert_eq!(detokenize(&ids, &vocab).unwrap(), bytes);
    }

    #[test]
    fn id_stream_round_trip(seqs in proptest::collection::vec(proptest::collection::vec(0u32..5000, 0..20), 0..10)) {
        let seqs: Vec<TokenSequence> = seqs.into_iter().map(TokenSequence::from).collect();
        let text = write_id_stream(alien_core::Fingerprint(0xfeed), &seqs);
        let (fp, back) = read_id_stream(&text).unwrap();
        prop_assert_eq!(fp, Some(alien_core::Fingerprint(0xfeed)));
        prop_assert_eq!(back, seqs);
    }
}

#[test]
fn zero_rho_is_a_copy() {
    let (vocab, key) = setup(0.0);
    assert!(key.is_identity());
    let t = Translator::new(&key, &vocab).unwrap();
    let x = "plain text stays plain".as_bytes();
    let tr = t.encode_for_transport(x, true, true).unwrap();
    assert_eq!(tr.bytes, x);
}

#[test]
fn specials_are_never_remapped() {
    let (vocab, key) = setup(1.0);
    let t = Translator::new(&key, &vocab).unwrap();
    let specials: Vec<TokenId> = vocab.specials().iter().copied().collect();
    assert_eq!(t.encode_ids(&specials).unwrap().0, specials);
    assert!(specials.iter().all(|&s| !key.is_masked(s)));
}

#[test]
fn foreign_fingerprint_stream_rejected() {
    let (vocab, key) = setup(1.0);
    let t = Translator::new(&key, &vocab).unwrap();
    let stream = write_id_stream(alien_core::Fingerprint(1), &[TokenSequence::from(vec![5u32, 6])]);
    assert!(matches!(t.decode_transport(stream.as_bytes()), Err(Error::Compatibility { .. })));
}

#[test]
fn key_for_other_vocab_rejected() {
    let (_, key) = setup(1.0);
    let other = synth::byte_complete_vocab(900, 99).unwrap();
    assert!(matches!(Translator::new(&key, &other), Err(Error::Compatibility { .. })));
}

#[test]
fn unknown_ids_rejected() {
    let (vocab, key) = setup(1.0);
    let t = Translator::new(&key, &vocab).unwrap();
    assert!(matches!(t.encode_ids(&[900]), Err(Error::Reference(_))));
    assert!(matches!(t.decode_ids(&[u32::MAX]), Err(Error::Reference(_))));
}

#[test]
fn text_outside_vocab_reports_position() {
    let entries = vec![(b"a".to_vec(), 0), (b"b".to_vec(), 1)];
    let vocab = Vocabulary::new(entries, []).unwrap();
    let store = EmbeddingStore::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let key = build_key(&vocab, &store, &BuildConfig::default()).unwrap();
    let t = Translator::new(&key, &vocab).unwrap();
    assert!(matches!(t.encode_text(b"abz", false), Err(Error::Coverage { position: 2, .. })));
}
