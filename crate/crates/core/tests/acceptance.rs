//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nerflip_core::augment::{augment, AugmentConfig, AugmentedSample};
use nerflip_core::corpus::{EntitySpan, TaggedSentence, TypeId};
use nerflip_core::eval::micro_f1;
use nerflip_core::filter::{echo_oracle, filter, make_word2type_query, QueryMode};
use nerflip_core::flip::FlipScheme;
use nerflip_core::gateway::{Gateway, Lexicons, MockBackend};
use nerflip_core::linearize::{delinearize, linearize, segment, LinearizedText};
use nerflip_core::masking::{compose_template, type_edit_distance, OpConfig, OpKind};
use nerflip_core::mixup::{
    build_pairs, interpolate_states, mix_labels, sample_lambda, LabelDistributionSeq, MixupConfig, PairCandidate,
};
use nerflip_core::pipeline::{run_pipeline, Phase, RunMode};
use nerflip_core::rng;
use nerflip_core::strategy::{strategy_ops, StrategyKind};
use nerflip_core::tagger::StubTrainer;
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn linearization_round_trip() -> Check {
    let schema = common::schema();
    let start = Instant::now();
    let mut r = rng::stream(1, &["acceptance", "round-trip"]);
    let (mut adjacent, mut boundary, mut empty_ctx, mut reserved) = (0, 0, 0, 0);
    let n = 12_000;
    for i in 0..n {
        let s = common::fuzz_sentence(&mut r, &i.to_string(), schema.len() as u32);
        let text = linearize(&s, &schema).map_err(|e| e.to_string())?.to_string();
        let back = delinearize(&LinearizedText::parse(&text), &schema, s.id.clone()).map_err(|e| format!("{text}: {e}"))?;
        ensure(back == s, || format!("sentence {i} not recovered from {text:?}"))?;
        adjacent += s.spans.windows(2).any(|w| w[0].end == w[1].start) as usize;
        boundary += s.spans.iter().any(|sp| sp.start == 0 || sp.end == s.tokens.len()) as usize;
        empty_ctx += segment(&s).contexts.iter().any(Vec::is_empty) as usize;
        reserved += s.tokens.iter().any(|t| ["[", "]", "|"].contains(&t.as_str()) || t.starts_with('\\')) as usize;
    }
    let elapsed = start.elapsed();
    ensure(adjacent > 0 && boundary > 0 && empty_ctx > 0 && reserved > 0, || "fuzz corpus lacks an edge case".into())?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{n}/{n} exact ({adjacent} adjacent, {boundary} boundary, {empty_ctx} empty-context, {reserved} reserved-token) in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn op_counts(ops: &[nerflip_core::masking::Operation]) -> BTreeMap<OpKind, usize> {
    let mut m = BTreeMap::new();
    for op in ops {
        *m.entry(op.kind()).or_default() += 1;
    }
    m
}

fn strategy_algebra() -> Check {
    let schema = common::schema();
    // Six entities separated by six-token contexts.
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for e in 0..6 {
        tokens.extend(["w1", "w2", "w3", "w4", "w5", "w6"].map(String::from));
        spans.push(EntitySpan::new(tokens.len(), tokens.len() + 2, TypeId(e % 5)));
        tokens.extend(["E", "F"].map(String::from));
    }
    tokens.extend(["z1", "z2", "z3", "z4", "z5", "z6"].map(String::from));
    let sentence = TaggedSentence::new("big", tokens, spans).unwrap();
    let seg = segment(&sentence);
    let original = sentence.type_sequence();
    let cfg = OpConfig::default();
    let mut cases = 0;
    for kind in StrategyKind::ALL {
        for k in 0..=2usize {
            for m in 1..=3usize {
                for n in 1..=3usize {
                    if k > m {
                        continue;
                    }
                    let ops = strategy_ops(kind, k, m, n).map_err(|e| e.to_string())?;
                    let got = op_counts(&ops);
                    let mut want = BTreeMap::new();
                    let flips = if kind == StrategyKind::Sa { 0 } else { k };
                    let mut put = |op, c| {
                        if c > 0 {
                            want.insert(op, c);
                        }
                    };
                    match kind {
                        StrategyKind::Sa => put(OpKind::Op1, m),
                        StrategyKind::Elc => {
                            put(OpKind::Op2, k);
                            put(OpKind::Op1, m - k)
                        }
                        StrategyKind::Ea => {
                            put(OpKind::Op3, k);
                            put(OpKind::Op1, m - k)
                        }
                        StrategyKind::Er => {
                            put(OpKind::Op3, k);
                            put(OpKind::Op4, k);
                            put(OpKind::Op1, m - k)
                        }
                    }
                    put(OpKind::Op5, n);
                    ensure(got == want, || format!("{kind} K={k} M={m} N={n}: {got:?} != {want:?}"))?;
                    for trial in 0..20 {
                        let mut r = rng::stream(trial, &["algebra", kind.as_str(), &format!("{k}{m}{n}")]);
                        let t = compose_template(&seg, &ops, &schema, &FlipScheme::default(), &cfg, &mut r)
                            .map_err(|e| format!("{kind} K={k} M={m} N={n}: {e}"))?;
                        let d = type_edit_distance(&original, &t.expected_types);
                        ensure(d == flips, || format!("{kind} K={k} M={m} N={n}: edit distance {d}, want {flips}"))?;
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} (strategy, K, M, N) cases match the op algebra; edit distances exact over 20 draws each"))
}

fn augmented_corpus(n_sentences: usize, seed: u64) -> (Vec<TaggedSentence>, Vec<AugmentedSample>, MockBackend) {
    let train = common::natural_corpus(n_sentences, seed, "");
    let backend = MockBackend::new(common::schema(), Lexicons::from_dataset(&common::dataset(train.clone())));
    let gw = Gateway::new(common::schema()).with_retries(3, Duration::ZERO);
    let cfg = AugmentConfig { multiplier: 2, ..Default::default() };
    let out = augment(&train, &cfg, seed, &gw, &backend).unwrap();
    (train, out.samples, backend)
}

fn filter_correctness() -> Check {
    let schema = common::schema();
    let gw = Gateway::new(schema.clone()).with_retries(0, Duration::ZERO);
    let (_, samples, mock) = augmented_corpus(80, 3);
    let with_entities: Vec<AugmentedSample> = samples.into_iter().filter(|s| !s.expected_types.is_empty()).take(100).collect();
    ensure(with_entities.len() == 100, || format!("only {} entity-bearing samples", with_entities.len()))?;

    let echo = echo_oracle(&with_entities, &schema);
    let out = filter(&with_entities, QueryMode::Joint, &gw, &echo);
    ensure(out.kept.len() == 100, || format!("echo kept {}/100", out.kept.len()))?;

    let mut detail = vec!["echo 100%".to_string()];
    for p in [0.1, 0.5, 0.9] {
        let n_bad = (p * 100.0_f64).round() as usize;
        let mut order: Vec<usize> = (0..100).collect();
        order.shuffle(&mut rng::stream(7, &["adversary", &p.to_string()]));
        let mut adversary = echo_oracle(&with_entities, &schema);
        for &i in &order[..n_bad] {
            let s = &with_entities[i];
            let j = i % s.expected_types.len();
            let wrong = schema.type_ids().find(|t| *t != s.expected_types[j]).unwrap();
            adversary.corrupt(&s.id, j, schema.display_name(wrong));
        }
        let out = filter(&with_entities, QueryMode::Joint, &gw, &adversary);
        let retention = out.report.total().retention();
        ensure(out.kept.len() == 100 - n_bad, || format!("p={p}: kept {}", out.kept.len()))?;
        ensure(retention == 1.0 - p || (retention - (1.0 - p)).abs() < 1e-12, || format!("p={p}: retention {retention}"))?;
        let again = filter(&out.kept, QueryMode::Joint, &gw, &adversary);
        ensure(again.kept.len() == out.kept.len(), || format!("p={p}: not idempotent"))?;
        detail.push(format!("p={p} -> {:.1}%", 100.0 * retention));
    }

    let first = filter(&with_entities, QueryMode::Joint, &gw, &mock);
    let second = filter(&first.kept, QueryMode::Joint, &gw, &mock);
    ensure(second.kept.len() == first.kept.len(), || "mock scorer filter not idempotent".into())?;
    for s in &with_entities[..5] {
        let q = make_word2type_query(s, &schema);
        let names: Vec<&str> = s.expected_types.iter().map(|t| schema.display_name(*t)).collect();
        ensure(q.substitute(&names) == s.linearized, || format!("query of {} does not reconstruct", s.id))?;
    }
    detail.push(format!("idempotent (mock kept {}/100 twice)", first.kept.len()));
    Ok(detail.join(", "))
}

fn mixup_math() -> Check {
    let mut r = rng::stream(5, &["acceptance", "mixup"]);
    for _ in 0..200 {
        let len = r.random_range(1..8);
        let dim = r.random_range(1..6);
        let mut v = || -> Vec<Vec<f64>> { (0..len).map(|_| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect()).collect() };
        let (hf, ho) = (v(), v());
        ensure(interpolate_states(&hf, &ho, 1.0).unwrap() == hf, || "lambda=1 is not h_f".into())?;
        ensure(interpolate_states(&hf, &ho, 0.0).unwrap() == ho, || "lambda=0 is not h_o".into())?;
    }
    let cfg = MixupConfig::default();
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_lambda(&cfg, &mut r).unwrap()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    ensure((mean - 0.963).abs() <= 0.005, || format!("mean {mean}"))?;
    ensure((var - 2.625e-4).abs() <= 0.2 * 2.625e-4, || format!("variance {var}"))?;

    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let len = r.random_range(1..10);
        let width = r.random_range(2..10);
        let mut row = || {
            let raw: Vec<f64> = (0..width).map(|_| r.random_range(0.0..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let a: Vec<Vec<f64>> = (0..len).map(|_| row()).collect();
        let b: Vec<Vec<f64>> = (0..len).map(|_| row()).collect();
        let lam = sample_lambda(&cfg, &mut r).unwrap();
        let m = mix_labels(&LabelDistributionSeq::new(a).unwrap(), &LabelDistributionSeq::new(b).unwrap(), lam).unwrap();
        for row in m.rows() {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("row sum deviates by {worst}"))?;

    let (train, samples, _) = augmented_corpus(60, 9);
    let originals: HashSet<String> = train.iter().map(|s| s.id.clone()).collect();
    let cands: Vec<PairCandidate> = samples
        .iter()
        .map(|s| PairCandidate { id: &s.id, parent_id: &s.parent_id, label_flipping: s.is_label_flipping() })
        .collect();
    let pairs = build_pairs(&cands, &originals, &cfg, 9).map_err(|e| e.to_string())?;
    let paired: HashSet<&str> = pairs.iter().map(|p| p.flipped_id.as_str()).collect();
    let flipping: HashSet<&str> = samples.iter().filter(|s| s.strategy != StrategyKind::Sa).map(|s| s.id.as_str()).collect();
    ensure(paired == flipping && paired.len() == pairs.len(), || "pairing is not a bijection onto flipped samples".into())?;
    let parent_of: HashMap<&str, &str> = samples.iter().map(|s| (s.id.as_str(), s.parent_id.as_str())).collect();
    ensure(pairs.iter().all(|p| parent_of[p.flipped_id.as_str()] == p.original_id), || "pair with a foreign parent".into())?;
    Ok(format!(
        "endpoints exact; mean {mean:.5}, variance {var:.4e}; max row-sum error {worst:.1e}; {} pairs = {} flipped samples, 0 SA",
        pairs.len(),
        flipping.len()
    ))
}

fn brute_force(gold: &[TaggedSentence], pred: &[TaggedSentence]) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        for ps in &p.spans {
            if g.spans.iter().any(|gs| gs.start == ps.start && gs.end == ps.end && gs.type_id == ps.type_id) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for gs in &g.spans {
            if !p.spans.iter().any(|ps| gs.start == ps.start && gs.end == ps.end && gs.type_id == ps.type_id) {
                fn_ += 1;
            }
        }
    }
    (tp, fp, fn_)
}

fn random_spans<R: Rng>(r: &mut R, len: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        if r.random_bool(0.35) {
            let end = (i + r.random_range(1..=3)).min(len);
            spans.push(EntitySpan::new(i, end, TypeId(r.random_range(0..3))));
            i = end;
        } else {
            i += 1;
        }
    }
    spans
}

fn micro_f1_oracle() -> Check {
    let mut r = rng::stream(11, &["acceptance", "f1"]);
    for inst in 0..1000 {
        let n = r.random_range(0..=10);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for i in 0..n {
            let len = r.random_range(1..12);
            let toks: Vec<String> = (0..len).map(|j| format!("t{j}")).collect();
            let gs = random_spans(&mut r, len);
            let ps = if r.random_bool(0.3) { gs.clone() } else { random_spans(&mut r, len) };
            gold.push(TaggedSentence::new(i.to_string(), toks.clone(), gs).unwrap());
            pred.push(TaggedSentence::new(i.to_string(), toks, ps).unwrap());
        }
        let got = micro_f1(&gold, &pred).map_err(|e| e.to_string())?;
        let (tp, fp, fn_) = brute_force(&gold, &pred);
        ensure((got.tp, got.fp, got.fn_) == (tp, fp, fn_), || format!("instance {inst}: counts differ"))?;
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
        ensure(got.precision == p && got.recall == rc && (got.f1 - f).abs() < 1e-12, || format!("instance {inst}: ratios differ"))?;
    }
    Ok("1000/1000 instances agree with the brute-force TP/FP/FN oracle".into())
}

fn end_to_end_determinism() -> Check {
    let start = Instant::now();
    let inputs = common::small_inputs(21);
    let cfg = common::small_config(21, 2);
    let mut detail = Vec::new();
    for mode in [RunMode::Run, RunMode::RunStar] {
        let mut manifests = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let backend = MockBackend::new(inputs.schema.clone(), Lexicons::from_dataset(&common::dataset(inputs.train.clone())));
            let trainer = StubTrainer::persistent(dir.path().join("models"));
            let out = run_pipeline(mode, &cfg, &inputs, &backend, &trainer, dir.path()).map_err(|e| e.to_string())?;
            ensure(out.manifest.state.phase == Phase::Done, || "run did not finish".into())?;
            manifests.push(fs::read(dir.path().join("manifest.json")).map_err(|e| e.to_string())?);
        }
        ensure(manifests[0] == manifests[1], || format!("{mode:?} manifests differ"))?;
        detail.push(format!("{mode:?} manifests identical ({} bytes)", manifests[0].len()));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("{} in {:.2}s", detail.join(", "), elapsed.as_secs_f64()))
}

fn counting_identity() -> Check {
    let train = common::natural_corpus(50, 4, "");
    let backend = MockBackend::new(common::schema(), Lexicons::from_dataset(&common::dataset(train.clone())));
    let gw = Gateway::new(common::schema()).with_retries(3, Duration::ZERO);
    let mut detail = Vec::new();
    for multiplier in [1, 3] {
        let cfg = AugmentConfig { multiplier, ..Default::default() };
        let out = augment(&train, &cfg, 4, &gw, &backend).map_err(|e| e.to_string())?;
        let t = out.report.totals();
        let expected = train.len() * 4 * multiplier;
        ensure(t.attempted == expected, || format!("attempted {} != {expected}", t.attempted))?;
        ensure(out.samples.len() == expected - t.skipped_total() - t.unparseable, || "produced count off".into())?;
        ensure(out.report.reconciles(), || format!("report does not reconcile:\n{}", out.report))?;
        let mut per: BTreeMap<StrategyKind, usize> = BTreeMap::new();
        for s in &out.samples {
            *per.entry(s.strategy).or_default() += 1;
        }
        for (k, c) in &out.report.per_strategy {
            ensure(per.get(k).copied().unwrap_or(0) == c.produced, || format!("{k}: per-strategy produced count off"))?;
        }
        detail.push(format!(
            "x{multiplier}: {expected} = {} produced + {} skipped + {} unparseable",
            t.produced,
            t.skipped_total(),
            t.unparseable
        ));
    }
    Ok(detail.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("linearization round trip", linearization_round_trip),
        ("strategy algebra", strategy_algebra),
        ("filter correctness", filter_correctness),
        ("mixup math", mixup_math),
        ("micro-F1 oracle agreement", micro_f1_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("counting identity", counting_identity),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
