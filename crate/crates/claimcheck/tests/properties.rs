//! Property tests for the published invariants: parser totality and
//! round-trips, citation subsets, rendering injectivity, sampling counts,
//! and trace-level determinism.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use claimcheck::agent::{verify_claim, AgentConfig};
use claimcheck::corpus::{balanced_sample, FactCheckRecord};
use claimcheck::gateway::{Gateway, ScriptedBackend};
use claimcheck::retrieval::{
    render_observation, BackoffPolicy, RetrievalError, SearchProvider, SearchResult, Searcher,
};
use claimcheck::taxonomy::{
    binarize, map_publisher_verdict, parse_final_answer, AgentVerdict, BinaryGroup, Claim,
    MappingTable, SixLevelVerdict,
};

/// Same scan the parser uses: ASCII case-insensitive marker search.
fn contains_marker(s: &str) -> bool {
    let bytes = s.as_bytes();
    let marker = b"final answer";
    bytes.len() >= marker.len()
        && (0..=bytes.len() - marker.len())
            .any(|i| bytes[i..i + marker.len()].eq_ignore_ascii_case(marker))
}

proptest! {
    /// Total over arbitrary UTF-8: returns a value or a declared error,
    /// never panics.
    #[test]
    fn parser_is_total(raw in any::<String>(), domains in proptest::collection::btree_set("[a-z]{1,8}\\.(com|org)", 0..4)) {
        let _ = parse_final_answer(&raw, &domains);
    }

    /// Round-trip: rendering a verdict and parsing it back is the identity,
    /// for any reason text that does not itself contain the marker.
    #[test]
    fn parser_round_trips_every_verdict(
        verdict_idx in 0usize..6,
        reason in any::<String>().prop_filter("no marker in reason", |r| !contains_marker(r)),
    ) {
        let verdict = SixLevelVerdict::ALL[verdict_idx];
        let output = format!("Final Answer: {}, {}", verdict.token(), reason);
        let parsed = parse_final_answer(&output, &BTreeSet::new()).unwrap();
        prop_assert_eq!(parsed.verdict, AgentVerdict::Scale(verdict));
    }

    /// Cited domains are always a subset of the session domains.
    #[test]
    fn citations_are_subset_of_session_domains(
        reason in "[ -~]{0,120}",
        domains in proptest::collection::btree_set("[a-z]{1,8}\\.(com|org|net)", 0..6),
    ) {
        prop_assume!(!contains_marker(&reason));
        let output = format!("Final Answer: half-true, {reason}");
        let parsed = parse_final_answer(&output, &domains).unwrap();
        for cited in &parsed.cited_domains {
            prop_assert!(domains.contains(cited));
        }
    }

    /// Re-normalized inputs map identically.
    #[test]
    fn mapping_ignores_case_and_whitespace(
        raw in "[a-zA-Z]{1,10}( [a-zA-Z]{1,10})?",
        leading in " {0,3}",
        trailing in " {0,3}",
    ) {
        let table = MappingTable::default();
        let mangled = format!("{leading}{}{trailing}", raw.to_uppercase());
        prop_assert_eq!(
            map_publisher_verdict(&mangled, &table),
            map_publisher_verdict(&raw.to_lowercase(), &table)
        );
    }

    /// Every input domain appears verbatim in the rendered observation.
    #[test]
    fn observation_lists_every_domain(
        domains in proptest::collection::vec("[a-z]{1,10}\\.(com|org)", 1..10),
    ) {
        let results: Vec<SearchResult> = domains
            .iter()
            .enumerate()
            .map(|(i, d)| SearchResult {
                rank: i as u32 + 1,
                url: format!("https://{d}/x"),
                domain: d.clone(),
                title: "t".into(),
                snippet: "s".into(),
                published: None,
            })
            .collect();
        let text = render_observation(&results);
        for d in &domains {
            prop_assert!(text.contains(d.as_str()), "{d} missing from observation");
        }
    }

    /// Per-class counts equal min(per_class, available), whatever the shape
    /// of the input.
    #[test]
    fn balanced_sample_counts_are_exact(
        counts in proptest::collection::vec(0usize..40, 6),
        per_class in 0usize..25,
        seed in any::<u64>(),
    ) {
        let mut records = Vec::new();
        let mut id = 0;
        for (class, n) in SixLevelVerdict::ALL.into_iter().zip(&counts) {
            for _ in 0..*n {
                records.push(FactCheckRecord {
                    claim: Claim::new(format!("p{id}"), "text").unwrap(),
                    gold_six: Some(class),
                    gold_coarse: None,
                    publisher_domain: "x.org".into(),
                    review_url: "https://x.org".into(),
                    fact_check_date: None,
                    raw_verdict: class.token().into(),
                    english_text: None,
                    translation_failed: false,
                });
                id += 1;
            }
        }
        let sample = balanced_sample(&records, per_class, seed);
        for (class, n) in SixLevelVerdict::ALL.into_iter().zip(&counts) {
            let got = sample.iter().filter(|r| r.gold_six == Some(class)).count();
            prop_assert_eq!(got, per_class.min(*n));
        }
        prop_assert_eq!(sample.len(), counts.iter().map(|n| per_class.min(*n)).sum::<usize>());
    }
}

#[test]
fn binarize_respects_the_order() {
    let all = SixLevelVerdict::ALL;
    for (i, v1) in all.into_iter().enumerate() {
        for v2 in &all[i..] {
            if binarize(AgentVerdict::Scale(v1)) == BinaryGroup::TrueGroup {
                assert_eq!(binarize(AgentVerdict::Scale(*v2)), BinaryGroup::TrueGroup);
            }
        }
    }
}

struct FixedProvider;

impl SearchProvider for FixedProvider {
    fn search_page(&self, q: &str, n: usize) -> Result<Vec<SearchResult>, RetrievalError> {
        Ok((1..=n.min(4) as u32)
            .map(|i| SearchResult {
                rank: i,
                url: format!("https://d{i}.org/{}", q.len()),
                domain: format!("d{i}.org"),
                title: format!("about {q}"),
                snippet: "details".into(),
                published: None,
            })
            .collect())
    }
}

/// With identical scripts and fixtures, sessions serialize byte-identically.
#[test]
fn scripted_sessions_are_trace_deterministic() {
    let script = vec![
        "Google: first angle".to_string(),
        "Google: second angle".to_string(),
        "Final Answer: mostly-true, consistent with d1.org.".to_string(),
    ];
    let run = || {
        let searcher = Searcher::new(Arc::new(FixedProvider)).with_backoff(BackoffPolicy::immediate());
        let mut gateway = Gateway::new("det", Box::new(ScriptedBackend::new(script.clone())));
        let claim = Claim::new("det", "a fixed claim").unwrap();
        let trace = verify_claim(&claim, "c", &AgentConfig::new("m"), &mut gateway, &searcher);
        // timestamps vary run to run; the verification record must not
        serde_json::to_string(&trace.result).unwrap()
    };
    assert_eq!(run(), run());
}
