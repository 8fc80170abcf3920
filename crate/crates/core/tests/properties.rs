//! Property tests for the stated invariants.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pear_core::kb::chunk::chunk_spans;
use pear_core::kb::embed::HashingEmbedder;
use pear_core::orchestrator::{step, Event, SessionState, Stage};
use pear_core::params::{diff, parse_params, to_canonical_text, validate, Field, FieldValue, ReconstructionParams};
use pear_core::rulebook::{ExperimentFacts, IssueTag, QualityReport, RuleSet};

fn valid() -> impl Strategy<Value = ReconstructionParams> {
    any::<u64>().prop_map(|seed| common::random_valid(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// A different value of the same kind.
fn mutated(v: &FieldValue) -> FieldValue {
    match v {
        FieldValue::Int(i) => FieldValue::Int(i + 1),
        FieldValue::Real(x) => FieldValue::Real(x + 0.25),
        FieldValue::Bool(b) => FieldValue::Bool(!b),
        FieldValue::Text(s) => FieldValue::Text(format!("{s}x")),
    }
}

fn facts() -> impl Strategy<Value = ExperimentFacts> {
    (1..=100_000_000u64, prop::sample::select(vec![80.0, 200.0, 300.0]), any::<bool>(), any::<bool>(), 0.0..400.0f64)
        .prop_map(|(t, e, a, d, th)| ExperimentFacts {
            total_patterns: t,
            beam_energy: e,
            initial_probe_accurate: a,
            sample_drifted: d,
            sample_thickness: th,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn canonical_text_roundtrips(p in valid()) {
        prop_assert!(validate(&p).ok);
        prop_assert_eq!(parse_params(&to_canonical_text(&p)).unwrap(), p);
    }

    #[test]
    fn canonical_text_is_injective(a in valid(), b in valid()) {
        prop_assert_eq!(to_canonical_text(&a) == to_canonical_text(&b), a == b);
    }

    #[test]
    fn validate_is_repeatable(p in valid()) {
        let before = p.clone();
        prop_assert_eq!(validate(&p), validate(&p));
        prop_assert_eq!(p, before);
    }

    #[test]
    fn single_field_change_is_one_diff(p in valid(), i in 0..Field::ALL.len()) {
        let field = Field::ALL[i];
        let mut q = p.clone();
        q.set(field, mutated(&p.get(field))).unwrap();
        let d = diff(&p, &q);
        prop_assert_eq!(d.changes.len(), 1);
        prop_assert_eq!(d.changes[0].field, field);
        prop_assert!(diff(&p, &p).is_empty());
    }

    #[test]
    fn batch_rule_is_the_integer_square_root(n in 1..=100_000_000u64) {
        let f = ExperimentFacts {
            total_patterns: n,
            beam_energy: 300.0,
            initial_probe_accurate: true,
            sample_drifted: false,
            sample_thickness: 10.0,
        };
        let p = RuleSet::default_rules().recommend_initial(&f, &ReconstructionParams::default()).params;
        prop_assert_eq!(p.update_batch_size, common::isqrt_oracle(n));
    }

    #[test]
    fn initial_recommendation_is_idempotent(f in facts(), p in valid()) {
        let rules = RuleSet::default_rules();
        let once = rules.recommend_initial(&f, &p);
        let twice = rules.recommend_initial(&f, &once.params);
        prop_assert_eq!(&once.params, &twice.params);
        for e in &once.explanations {
            prop_assert_eq!(once.params.get(e.field), e.new.clone());
        }
    }

    #[test]
    fn clean_report_changes_nothing(p in valid()) {
        let r = RuleSet::default_rules().recommend_updates(&QualityReport::clean(), &p);
        prop_assert_eq!(r.params, p);
        prop_assert!(r.explanations.is_empty());
    }

    #[test]
    fn update_explanations_name_their_field(p in valid(), structures: bool, layer: bool, blur: bool) {
        let mut tags = Vec::new();
        if layer { tags.push(IssueTag::PerLayerRandomFeatures); }
        if blur { tags.push(IssueTag::AtomsBlurred); }
        if tags.is_empty() { tags.push(IssueTag::None); }
        let report = QualityReport { last_probe_mode_structures: structures, free_text_issues: tags, ..QualityReport::clean() };
        let r = RuleSet::default_rules().recommend_updates(&report, &p);
        let changed: Vec<Field> = diff(&p, &r.params).changes.iter().map(|c| c.field).collect();
        for f in &changed {
            prop_assert!(r.explanations.iter().any(|e| e.field == *f));
        }
        prop_assert!(r.params.layer_regularization_coefficient <= 1.0);
    }

    #[test]
    fn retrieval_matches_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let texts = common::random_corpus(&mut rng);
        let corpus = common::corpus(&texts);
        let q = common::random_query(&mut rng);
        let hits = corpus.retrieve(&q, &HashingEmbedder::default().embed_local(&q), 5);
        let want: Vec<usize> = common::brute_force(&texts, &q, corpus.alpha).iter().take(5).map(|(i, _)| *i).collect();
        prop_assert_eq!(hits.iter().map(|h| h.chunk_id).collect::<Vec<_>>(), want);
        for h in &hits {
            prop_assert!((0.0..=1.0).contains(&h.score));
        }
    }

    #[test]
    fn chunks_reconstruct_the_text(text in "[a-z .\n]{0,3000}", size in 50..1500usize, overlap_pct in 0..50usize) {
        let overlap = size * overlap_pct / 100;
        let chars: Vec<char> = text.chars().collect();
        let spans = chunk_spans(&text, size, overlap);
        let mut rebuilt = String::new();
        let mut end = 0;
        for &(s, e) in &spans {
            prop_assert!(s <= end && e > end && e - s <= size + overlap);
            rebuilt.extend(&chars[end..e]);
            end = e;
        }
        prop_assert_eq!(rebuilt, text);
    }

    /// Whatever the order of events, a script is generated only after a
    /// confirmation, and terminal stages accept nothing.
    #[test]
    fn generate_needs_confirmation(level in 0..=2u8, picks in prop::collection::vec(0..9usize, 1..80)) {
        let events = [
            Event::Started,
            Event::Answered,
            Event::Formatted,
            Event::UserReply("lgtm".into()),
            Event::UserReply("set gpu to 2".into()),
            Event::AutoConfirmed,
            Event::Generated { path: "s.m".into() },
            Event::RunFinished,
            Event::AutoDecide,
        ];
        let mut s = SessionState::new(level, 5);
        for i in picks {
            let e = &events[i];
            if let Ok((next, _)) = step(&s, e) {
                if matches!(e, Event::Generated { .. }) {
                    prop_assert!(s.confirmed && s.stage == Stage::Generate);
                    prop_assert_eq!(next.counter, s.counter + 1);
                }
                prop_assert!(!s.stage.is_terminal());
                s = next;
            }
        }
    }
}
