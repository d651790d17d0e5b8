//! End-to-end acceptance checks at desk scale.
//!
//! Runs with a plain `main` so that every criterion prints exactly one
//! PASS/FAIL line even when the run succeeds. Exits non-zero if any fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use alien_core::attacks::{bleu, frequency_attack, ngram_attack, nn_mapping_attack, rouge_l, AlignedPair};
use alien_core::bijection::{
    bucket_layout, build_key, mask_size, objective_value, score_components, BijectionKey, BuildConfig, EditMode,
};
use alien_core::report::{overlap_matrix, recovery_ratio};
use alien_core::synth::{self, ClassBigram};
use alien_core::text::levenshtein;
use alien_core::translator::AlienInput;
use alien_core::{EmbeddingStore, TokenId, TokenSequence, Translator, Vocabulary};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fixture(size: usize, seed: u64) -> (Vocabulary, EmbeddingStore) {
    let vocab = synth::byte_complete_vocab(size, seed).unwrap();
    let store = synth::clustered_embeddings(size, 32, 40, 0.8, seed + 1).unwrap();
    (vocab, store)
}

fn lossless() -> Outcome {
    let start = Instant::now();
    let (vocab, store) = fixture(4000, 11);
    let key = build_key(&vocab, &store, &BuildConfig { seed: 5, ..Default::default() }).map_err(|e| e.to_string())?;
    let t = Translator::new(&key, &vocab).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let mut mismatches = 0usize;
    for _ in 0..10_000 {
        let len = rng.random_range(0..=64);
        let z: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..vocab.len() as TokenId)).collect();
        let enc = t.encode_ids(&z).unwrap();
        mismatches += usize::from(t.decode_ids(&enc).unwrap().0 != z);
    }
    let (mut safe, mut safe_ok) = (0usize, 0usize);
    for _ in 0..1_000 {
        let x = synth::random_text(200, &mut rng);
        let doc = t.encode_text(&x, false).unwrap();
        mismatches += usize::from(t.decode_text(AlienInput::Document(&doc)).unwrap() != x);
        let tr = t.encode_for_transport(&x, false, false).unwrap();
        mismatches += usize::from(t.decode_transport(&tr.bytes).unwrap() != x);
        if doc.retokenization_safe {
            safe += 1;
            let text = doc.rendered.as_deref().unwrap();
            safe_ok += usize::from(t.decode_text(AlienInput::Text(text)).ok().as_deref() == Some(&x[..]));
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches == 0 && safe_ok == safe && elapsed < Duration::from_secs(10),
        format!(
            "{mismatches} mismatches over 10000 id sequences + 1000 texts, {safe_ok}/{safe} text-form round trips, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn toy_scores() -> Outcome {
    // (candidate, embedding similarity, edit distance as tabulated, expected score)
    let rows = [
        ("comes", 0.92, 1.0, 0.84),
        ("hello", 0.06, 4.0, 2.12),
        ("world", 0.40, 4.0, 2.80),
        ("cup", 0.07, 3.0, 1.14),
        ("here", 0.80, 3.0, 2.60),
    ];
    let mut worst = 0.0f64;
    let mut best: Option<(&str, f64)> = None;
    for (word, sim, edit, want) in rows {
        let s = score_components(edit, sim, 2.0);
        worst = worst.max((s - want).abs());
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((word, s));
        }
    }
    let winner = best.unwrap().0;
    let string_edits: Vec<String> = rows
        .iter()
        .map(|(w, ..)| format!("{w}={}", levenshtein(b"come", w.as_bytes())))
        .collect();
    check(
        worst <= 1e-9 && winner == "world",
        format!(
            "max |score - table| = {worst:.1e}, argmax {winner}; string edit distances {}",
            string_edits.join(" ")
        ),
    )
}

fn key_invariants() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    for case in 0..20 {
        let size = rng.random_range(260..1500);
        let vocab = synth::byte_complete_vocab(size, rng.random()).unwrap();
        let store = synth::clustered_embeddings(size, rng.random_range(4..24), rng.random_range(1..20), 0.7, rng.random()).unwrap();
        let rho = if case == 0 { 0.0 } else if case == 1 { 1.0 } else { rng.random_range(0.0..=1.0) };
        let config = BuildConfig {
            k: rng.random_range(1..60),
            mu: rng.random_range(0.0..3.0),
            rho,
            seed: rng.random(),
            buckets: rng.random_range(1..9),
            greedy_batch: rng.random_range(1..80),
            edit_mode: if rng.random_bool(0.5) { EditMode::Normalized } else { EditMode::Raw },
        };
        let key = build_key(&vocab, &store, &config).unwrap();
        let mut problems = Vec::new();
        if let Err(e) = key.check_invariants(&vocab) {
            problems.push(e.to_string());
        }
        for (&i, &j) in key.mapping() {
            if key.map_id(j) != i || !key.is_masked(j) {
                problems.push(format!("{i}->{j} is not an involution inside the mask"));
                break;
            }
        }
        let permutable = vocab.permutable_ids();
        if key.mask_len() != (config.rho * permutable.len() as f64).floor() as usize {
            problems.push(format!("mask size {} for rho {}", key.mask_len(), config.rho));
        }
        let layout = bucket_layout(config.seed, config.buckets, &permutable);
        let mut per_bucket: HashMap<usize, (usize, usize)> = HashMap::new();
        for id in key.mask() {
            per_bucket.entry(layout[&id]).or_default().0 += 1;
        }
        for &f in key.fixed_points() {
            per_bucket.entry(layout[&f]).or_default().1 += 1;
        }
        for (b, (size, fixed)) in &per_bucket {
            if *fixed > size % 2 {
                problems.push(format!("bucket {b} of size {size} has {fixed} fixed points"));
            }
        }
        let rebuilt = build_key(&vocab, &store, &config).unwrap();
        if rebuilt.to_json().unwrap() != key.to_json().unwrap() {
            problems.push("rebuild is not byte-identical".into());
        }
        if !problems.is_empty() {
            failures.push(format!("case {case}: {}", problems.join("; ")));
        }
    }
    check(failures.is_empty(), if failures.is_empty() { "20/20 configs".into() } else { failures.join(" | ") })
}

/// Best total over all matchings that leave at most one token unpaired.
fn exhaustive_optimum(ids: &[TokenId], score: &dyn Fn(TokenId, TokenId) -> f64) -> f64 {
    fn go(rest: &mut Vec<TokenId>, may_skip: bool, score: &dyn Fn(TokenId, TokenId) -> f64) -> f64 {
        let Some(first) = rest.pop() else { return 0.0 };
        let mut best = f64::NEG_INFINITY;
        if may_skip {
            best = go(rest, false, score);
        }
        for k in 0..rest.len() {
            let other = rest.remove(k);
            let v = 2.0 * score(first, other) + go(rest, may_skip, score);
            best = best.max(v);
            rest.insert(k, other);
        }
        rest.push(first);
        best
    }
    let mut rest = ids.to_vec();
    go(&mut rest, ids.len() % 2 == 1, score)
}

fn small_instance(tokens: usize, seed: u64) -> (Vocabulary, EmbeddingStore) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut entries: Vec<(Vec<u8>, TokenId)> = vec![(b"<s>".to_vec(), 0)];
    while entries.len() < tokens + 1 {
        let len = rng.random_range(2..=6);
        let w: Vec<u8> = (0..len).map(|_| rng.random_range(b'a'..=b'h')).collect();
        if entries.iter().all(|(e, _)| *e != w) {
            let id = entries.len() as TokenId;
            entries.push((w, id));
        }
    }
    let vocab = Vocabulary::new(entries, [0]).unwrap();
    let store = synth::clustered_embeddings(tokens + 1, 8, 1, 0.6, seed ^ 0xabc).unwrap();
    (vocab, store)
}

fn greedy_quality() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut worst_ratio = f64::INFINITY;
    let mut below = 0;
    for case in 0..50 {
        let tokens = rng.random_range(2..=8);
        let (vocab, store) = small_instance(tokens, 1000 + case);
        let config = BuildConfig { seed: case, ..Default::default() };
        let key = build_key(&vocab, &store, &config).unwrap();
        let greedy = objective_value(&key, &vocab, &store).unwrap();
        let score = |i: TokenId, j: TokenId| {
            alien_core::bijection::pair_score(i, j, &vocab, &store, config.mu, config.edit_mode).unwrap()
        };
        let ids = vocab.permutable_ids();
        let opt = exhaustive_optimum(&ids, &score);
        if opt <= 0.0 {
            return Err(format!("case {case}: non-positive optimum {opt}, ratio undefined"));
        }
        let ratio = greedy / opt;
        worst_ratio = worst_ratio.min(ratio);
        below += usize::from(ratio < 0.8);
    }
    let mut wins = 0;
    for case in 0..20u64 {
        let (vocab, store) = small_instance(100, 5000 + case);
        let config = BuildConfig { seed: case, ..Default::default() };
        let greedy = objective_value(&build_key(&vocab, &store, &config).unwrap(), &vocab, &store).unwrap();
        let mean = (0..100u64)
            .map(|r| objective_value(&BijectionKey::random(&vocab, &config, r).unwrap(), &vocab, &store).unwrap())
            .sum::<f64>()
            / 100.0;
        wins += usize::from(greedy > mean);
    }
    check(
        below == 0 && wins >= 19,
        format!("{below}/50 small instances below 0.8 of optimum (min {worst_ratio:.3}); greedy beats random mean {wins}/20"),
    )
}

fn build_budget() -> Outcome {
    let vocab = synth::byte_complete_vocab(32_768, 3).unwrap();
    let store = synth::clustered_embeddings(32_768, 64, 256, 0.8, 4).unwrap();
    let start = Instant::now();
    let key = build_key(&vocab, &store, &BuildConfig { k: 50, seed: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(300) && key.mask_len() == vocab.permutable_ids().len(),
        format!(
            "32768 tokens, d=64, k=50 built in {:.1}s on {} thread(s)",
            elapsed.as_secs_f64(),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn key_diversity() -> Outcome {
    let vocab = synth::byte_complete_vocab(5000, 21).unwrap();
    let store = synth::clustered_embeddings(5000, 32, 50, 0.6, 22).unwrap();
    let keys: Vec<BijectionKey> = (1..=5u64)
        .map(|seed| build_key(&vocab, &store, &BuildConfig { seed, buckets: 100, ..Default::default() }).unwrap())
        .collect();
    let m = overlap_matrix(&keys).unwrap();
    let max = m.max_off_diagonal().unwrap();
    check(max < 5.0, format!("max pairwise overlap {max:.2}% over 5 seeds (100 buckets)"))
}

fn frequency() -> Outcome {
    let (vocab, store) = fixture(10_000, 31);
    let key = build_key(&vocab, &store, &BuildConfig { seed: 8, ..Default::default() }).unwrap();
    let t = Translator::new(&key, &vocab).unwrap();
    let ranking = synth::zipf_ranking(&vocab.permutable_ids(), 32);
    let plain = synth::zipf_corpus(&ranking, 1.1, 2000, 500, 33).unwrap();
    let alien: Vec<TokenSequence> = plain.iter().map(|s| t.encode_ids(s).unwrap()).collect();
    let reference = synth::zipf_corpus(&ranking, 1.1, 2000, 500, 34).unwrap();
    let report = frequency_attack(&alien, &reference, &key, vocab.len()).unwrap();
    let tr = report.token_recovery.unwrap();
    check(
        tr < 0.01,
        format!(
            "token_recovery {:.3}% (head hit rate {:.3}%) on 1M-token corpora",
            100.0 * tr,
            100.0 * report.head_recovery.unwrap_or(0.0)
        ),
    )
}

fn ngram() -> Outcome {
    let (vocab, store) = fixture(20_000, 41);
    let key = build_key(&vocab, &store, &BuildConfig { seed: 9, ..Default::default() }).unwrap();
    let t = Translator::new(&key, &vocab).unwrap();
    let ranking = synth::zipf_ranking(&vocab.permutable_ids(), 42);
    let model = ClassBigram::new(&ranking, 200, 8, 1.1, 43).unwrap();
    let encode = |seqs: Vec<TokenSequence>| -> Vec<TokenSequence> { seqs.iter().map(|s| t.encode_ids(s).unwrap()).collect() };
    let eval = encode(model.sample(2000, 64, 44));
    let reference = model.sample(20_000, 64, 45);
    let leak_plain = model.sample(1000, 64, 46);
    let mut cells = Vec::new();
    let mut worst = 0.0f64;
    for budget in [10usize, 50, 1000] {
        let leaked: Vec<AlignedPair> = leak_plain[..budget]
            .iter()
            .map(|p| AlignedPair {
                alien: t.encode_ids(p).unwrap(),
                plain: p.clone(),
            })
            .collect();
        for n in [2usize, 3, 4] {
            let r = ngram_attack(&leaked, &eval, &reference, n, &key).unwrap();
            let b = r.bijection_recovery.unwrap_or(0.0);
            worst = worst.max(b);
            cells.push(format!("{budget}/{n}:{:.2}%", 100.0 * b));
        }
    }
    check(worst <= 0.005, format!("bijection_recovery by pairs/n {}", cells.join(" ")))
}

fn nearest_neighbor() -> Outcome {
    let vocab = synth::byte_complete_vocab(5000, 51).unwrap();
    let store = synth::clustered_embeddings(5000, 32, 50, 0.6, 52).unwrap();
    let key = build_key(&vocab, &store, &BuildConfig { k: 100, seed: 3, ..Default::default() }).unwrap();
    let built = nn_mapping_attack(&store, &key).unwrap().token_recovery.unwrap();

    // twins: rows 2m+3 and 2m+4 are near-copies, and the key pairs exactly them
    let permutable = vocab.permutable_ids();
    let base = synth::random_embeddings(permutable.len() / 2 + 1, 32, 53).unwrap();
    let mut rows: Vec<Vec<f32>> = (0..vocab.len()).map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }; 32]).collect();
    let mut pairs = Vec::new();
    for (m, pair) in permutable.chunks_exact(2).enumerate() {
        let v = base.row(m as TokenId).unwrap();
        rows[pair[0] as usize] = v.to_vec();
        rows[pair[1] as usize] = v.iter().map(|x| x * 1.001 + 1e-4).collect();
        pairs.push((pair[0], pair[1]));
    }
    let fixed: Vec<TokenId> = permutable.chunks_exact(2).remainder().to_vec();
    let twin_store = EmbeddingStore::from_rows(&rows).unwrap();
    let worst_key = BijectionKey::from_pairs(vocab.fingerprint(), BuildConfig::default(), &pairs, &fixed).unwrap();
    let worst = nn_mapping_attack(&twin_store, &worst_key).unwrap().token_recovery.unwrap();
    let fixed_share = fixed.len() as f64 / permutable.len() as f64;
    check(
        built <= 0.05 && (worst + fixed_share - 1.0).abs() < 1e-12,
        format!(
            "top-1 recovery {:.2}% on built key; {:.2}% on twin key ({} fixed point(s) excluded)",
            100.0 * built,
            100.0 * worst / (1.0 - fixed_share),
            fixed.len()
        ),
    )
}

fn scoring() -> Outcome {
    let same = ["the cat sat on the mat", "a dog barks"];
    let identity = bleu(&same, &same).unwrap();
    let disjoint = bleu(&["x y z w"], &["a b c d"]).unwrap();
    let cands = ["the cat sat on the mat", "a dog barks"];
    let refs = ["the cat is on the mat", "a dog barks loudly"];
    let oracle = 100.0 * (1.0f64 - 10.0 / 9.0).exp() * ((8.0f64 / 9.0) * (6.0 / 8.0) * (3.0 / 6.0) * (1.0 / 4.0)).powf(0.25);
    let fixture = bleu(&cands, &refs).unwrap();
    let rouge = rouge_l(&["a b c d"], &["a c d e"]).unwrap();
    let rr = recovery_ratio(52.92, 64.77).unwrap();
    check(
        identity == 100.0 && disjoint == 0.0 && (fixture - oracle).abs() <= 1e-6 && rouge == 0.75 && (rr - 81.70).abs() <= 0.01,
        format!("identity {identity}, disjoint {disjoint}, fixture {fixture:.6} vs {oracle:.6}, ROUGE-L {rouge}, RR {rr:.4}"),
    )
}

fn rho_effect() -> Outcome {
    let (vocab, store) = fixture(3000, 61);
    let corpus = synth::uniform_corpus(&vocab.permutable_ids(), 40, 500, 62).unwrap();
    let mut cells = Vec::new();
    let mut ok = true;
    for rho in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let key = build_key(&vocab, &store, &BuildConfig { rho, seed: 4, ..Default::default() }).unwrap();
        assert_eq!(key.mask_len(), mask_size(rho, vocab.permutable_ids().len()));
        let t = Translator::new(&key, &vocab).unwrap();
        let (mut changed, mut total) = (0usize, 0usize);
        for s in &corpus {
            let e = t.encode_ids(s).unwrap();
            changed += s.iter().zip(e.iter()).filter(|(a, b)| a != b).count();
            total += s.len();
        }
        let frac = changed as f64 / total as f64;
        ok &= (frac - rho).abs() <= 0.03;
        cells.push(format!("{rho}:{frac:.3}"));
    }
    check(ok, format!("changed fraction by rho over 20000 positions {}", cells.join(" ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("lossless round trip", lossless),
        ("toy pair scores", toy_scores),
        ("key invariants", key_invariants),
        ("greedy quality", greedy_quality),
        ("build budget", build_budget),
        ("key diversity", key_diversity),
        ("frequency attack", frequency),
        ("n-gram attack", ngram),
        ("nearest-neighbor attack", nearest_neighbor),
        ("scoring oracles", scoring),
        ("rho effect", rho_effect),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
