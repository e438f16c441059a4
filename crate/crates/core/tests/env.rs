use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semrl_core::env::*;

/// Breadth-first search over (column, row, rise) using the real step rule.
fn reachable(seed: u64, cfg: &LevelConfig) -> bool {
    let (start, _) = EnvState::reset(seed, cfg).unwrap();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        if !seen.insert((s.col, s.row, s.rise)) {
            continue;
        }
        for a in Action::ALL {
            let mut next = s.clone();
            next.steps = 0;
            let out = next.advance(a).unwrap();
            if out.reward > 0.0 {
                return true;
            }
            if !out.done {
                queue.push_back(next);
            }
        }
    }
    false
}

#[test]
fn thousand_levels_are_solvable() {
    let cfg = LevelConfig::default();
    let solved = (0..1000).filter(|&s| reachable(s, &cfg)).count();
    assert_eq!(solved, 1000);
}

#[test]
fn hardest_settings_stay_solvable() {
    let cfg = LevelConfig {
        gap_prob: 0.5,
        max_jump: MAX_GAP,
        height_change_prob: 0.6,
        ..LevelConfig::default()
    };
    for seed in 0..300 {
        assert!(reachable(seed, &cfg), "seed {seed}");
    }
}

// Seed 0 at gap probability 0.05. Terrain heights: 3 for columns 0..=9, a step up to 5 at column 10, a
// two-column gap at 14..=15, back to 5 until 23, then down to 4 and 2 before
// the goal at column 31.
#[test]
fn scripted_run_on_seed_zero() {
    let cfg = LevelConfig {
        gap_prob: 0.05,
        ..LevelConfig::default()
    };
    let lay = generate_level(0, &cfg).unwrap();
    assert_eq!(&lay.heights[8..17], &[3, 3, 5, 5, 5, 5, 0, 0, 5]);
    assert_eq!(lay.gaps.iter().filter(|g| **g).count(), 2);

    use Action::{Jump as J, Right as R};
    let mut plan = vec![R; 9];
    plan.extend([J, R, R, R, R]); // up the step, land on column 13
    plan.extend([J, R, R, R]); // over the gap
    plan.extend([R; 14]);
    let (mut s, _) = EnvState::reset(0, &cfg).unwrap();
    let mut total = 0.0;
    for (t, a) in plan.iter().enumerate() {
        let (_, out) = s.step(*a).unwrap();
        total += out.reward;
        assert_eq!(out.done, t == plan.len() - 1, "step {t}");
    }
    assert_eq!(total, 10.0);
}

#[test]
fn seed_and_actions_fix_the_trajectory() {
    let cfg = LevelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actions: Vec<Action> = (0..300).map(|_| Action::ALL[rng.random_range(0..4)]).collect();
    let run = || {
        let (mut s, first) = EnvState::reset(77, &cfg).unwrap();
        let mut trace = vec![(first, 0.0, false)];
        for &a in &actions {
            let (o, out) = s.step(a).unwrap();
            trace.push((o, out.reward, out.done));
            if out.done {
                break;
            }
        }
        trace
    };
    assert_eq!(run(), run());
}

#[test]
fn returns_stay_in_bounds() {
    let cfg = LevelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..200 {
        let (mut s, _) = EnvState::reset(seed, &cfg).unwrap();
        while !s.done {
            s.advance(Action::ALL[rng.random_range(0..4)]).unwrap();
        }
        assert!((-10.0..=10.0).contains(&s.score));
        assert!(s.steps <= cfg.step_cap);
    }
}

#[test]
fn observation_marks_agent_once_and_renders_with_channel_weights() {
    let cfg = LevelConfig::default();
    let (mut s, _) = EnvState::reset(0, &cfg).unwrap();
    for _ in 0..5 {
        let (o, _) = s.step(Action::Right).unwrap();
        assert_eq!(o.channel_count(CH_AGENT), 1);
        let img = render_pixels(&o);
        assert_eq!(img.len(), IMAGE_LEN);
        for r in 0..VIEW_HEIGHT {
            for c in 0..VIEW_WIDTH {
                let expect = [(CH_AGENT, 0.25), (CH_GOAL, 1.0), (CH_HAZARD, 0.75), (CH_TERRAIN, 0.5)]
                    .iter()
                    .find(|(ch, _)| o.get(r, c, *ch) == 1)
                    .map_or(0.0, |(_, v)| *v);
                assert_eq!(img[r * VIEW_WIDTH + c], expect);
            }
        }
    }
}
