use proptest::prelude::*;
use serde_json::json;
use userloop::env::ToolCall;
use userloop::metrics::*;
use userloop::rollout::{Body, Message, Trajectory};

fn brute_unique(tokens: &[u8]) -> f64 {
    if tokens.len() < 4 {
        return 1.0;
    }
    let mut seen: Vec<&[u8]> = Vec::new();
    let mut total = 0;
    for i in 0..=tokens.len() - 4 {
        total += 1;
        let w = &tokens[i..i + 4];
        if !seen.contains(&w) {
            seen.push(w);
        }
    }
    seen.len() as f64 / total as f64
}

#[test]
fn reward_matrix_errors() {
    assert!(matches!(all_correct_ratio(&[]), Err(MetricsError::Empty)));
    assert!(matches!(all_wrong_ratio(&[vec![]]), Err(MetricsError::Empty)));
    assert!(matches!(
        all_correct_ratio(&[vec![1, 0], vec![1]]),
        Err(MetricsError::Ragged)
    ));
    assert!(matches!(
        all_wrong_ratio(&[vec![2]]),
        Err(MetricsError::NotBinary(2))
    ));
}

#[test]
fn tool_counts_without_data() {
    let c = tool_counts(&[], &["a"]);
    assert_eq!(c.samples, 0);
    assert!(c.counts.is_empty());
}

#[test]
fn repeated_pattern_scores_low() {
    let looped: Vec<u8> = [1, 2, 3].iter().cycle().take(300).copied().collect();
    assert!(unique_4gram_ratio(&looped) < 0.02);
    let fresh: Vec<u32> = (0..300).collect();
    assert_eq!(unique_4gram_ratio(&fresh), 1.0);
}

proptest! {
    #[test]
    fn unique_ratio_matches_brute_force(tokens in prop::collection::vec(0u8..4, 0..80)) {
        prop_assert!((unique_4gram_ratio(&tokens) - brute_unique(&tokens)).abs() < 1e-12);
    }

    #[test]
    fn all_correct_and_wrong_partition(rows in prop::collection::vec(prop::collection::vec(0u8..2, 3), 1..20)) {
        let c = all_correct_ratio(&rows).unwrap();
        let w = all_wrong_ratio(&rows).unwrap();
        let mixed = rows.iter().filter(|r| r.contains(&0) && r.contains(&1)).count() as f64 / rows.len() as f64;
        prop_assert!((c + w + mixed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tool_counts_are_per_trajectory_means(calls in prop::collection::vec(prop::collection::vec(0usize..3, 0..10), 1..8)) {
        let names = ["x", "y", "z"];
        let trajs: Vec<Trajectory> = calls
            .iter()
            .map(|cs| {
                let mut t = Trajectory::new("t");
                t.messages = cs
                    .iter()
                    .map(|&k| Message::new(Body::ToolCall(ToolCall::new(names[k], json!({}))), 0, 1))
                    .collect();
                t
            })
            .collect();
        let got = tool_counts(&trajs, &["x", "z"]);
        for (k, n) in [(0usize, "x"), (2, "z")] {
            let want = calls.iter().map(|cs| cs.iter().filter(|&&c| c == k).count()).sum::<usize>() as f64 / calls.len() as f64;
            prop_assert!((got.counts[n] - want).abs() < 1e-12);
        }
        prop_assert!(!got.counts.contains_key("y"));
    }
}
