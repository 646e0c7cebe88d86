use quietbench_engine::fuzz::random_stream;
use quietbench_engine::{evaluate_oracle, generate, QueryId, Schema, StreamSpec, ViewState};

fn check_prefixes(query: QueryId, events: &[quietbench_engine::Event]) {
    let mut state = ViewState::new(query);
    for (i, e) in events.iter().enumerate() {
        state.apply(e).unwrap();
        let expected = evaluate_oracle(query, &events[..=i]).unwrap();
        assert_eq!(state.snapshot(), expected, "{query} diverged after prefix {}", i + 1);
    }
}

#[test]
fn every_prefix_matches_oracle_on_adversarial_streams() {
    for query in QueryId::ALL {
        for seed in 0..8 {
            check_prefixes(query, &random_stream(query, seed, 250));
        }
    }
}

#[test]
fn generated_streams_match_oracle_with_replay() {
    for query in QueryId::ALL {
        let spec = StreamSpec::new(query.schema(), 60, 11, 4);
        let events = generate(&spec).unwrap();
        check_prefixes(query, &events);
    }
}

#[test]
fn replay_does_not_reset_state() {
    let events = generate(&StreamSpec::new(Schema::Finance, 100, 1, 3)).unwrap();
    let mut state = ViewState::new(QueryId::C1);
    for e in &events {
        state.apply(e).unwrap();
    }
    assert_eq!(state.snapshot().scalar().unwrap().raw(), 300 * 10_000);
}

#[test]
fn q1_groups_always_have_rows() {
    let mut state = ViewState::new(QueryId::Q1);
    for e in random_stream(QueryId::Q1, 99, 400) {
        state.apply(&e).unwrap();
        let snap = state.snapshot();
        assert!(snap.groups().unwrap().values().all(|row| row[7].raw() > 0));
    }
}
