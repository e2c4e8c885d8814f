use std::collections::BTreeMap;

use proptest::prelude::*;
use unitguard::mape::{check_syscalls, cross_validate_can, train_baseline, vote, Voter};
use unitguard::policy::CanEvent;

/// Maximum bipartite matching (Kuhn's augmenting paths) of frames to
/// commands with the same id issued within `[t − tol, t]`.
fn max_matching(frames: &[CanEvent], commands: &[CanEvent], tol: u64) -> usize {
    let fits = |f: &CanEvent, c: &CanEvent| f.frame_id == c.frame_id && c.t_ms <= f.t_ms && f.t_ms - c.t_ms <= tol;
    fn augment(
        f: usize,
        frames: &[CanEvent],
        commands: &[CanEvent],
        fits: &dyn Fn(&CanEvent, &CanEvent) -> bool,
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for c in 0..commands.len() {
            if seen[c] || !fits(&frames[f], &commands[c]) {
                continue;
            }
            seen[c] = true;
            if owner[c].is_none_or(|g| augment(g, frames, commands, fits, seen, owner)) {
                owner[c] = Some(f);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; commands.len()];
    (0..frames.len())
        .filter(|&f| augment(f, frames, commands, &fits, &mut vec![false; commands.len()], &mut owner))
        .count()
}

fn events(max: usize) -> impl Strategy<Value = Vec<CanEvent>> {
    proptest::collection::vec((prop_oneof![Just(0x10u32), Just(0x100)], 0u64..300), 0..max)
        .prop_map(|v| v.into_iter().map(|(id, t)| CanEvent::new(id, t)).collect())
}

proptest! {
    #[test]
    fn flagged_frames_are_exactly_the_unmatched_ones(
        frames in events(40),
        commands in events(40),
        tol in 0u64..30,
    ) {
        let flagged = cross_validate_can(&frames, &commands, tol);
        prop_assert_eq!(flagged.len(), frames.len() - max_matching(&frames, &commands, tol));
        prop_assert!(flagged.iter().all(|&i| i < frames.len()));
    }

    /// The verdict depends only on the last `k` scores.
    #[test]
    fn vote_reads_only_the_last_k(
        prefix in proptest::collection::vec(0u8..=1, 0..10),
        tail in proptest::collection::vec(0u8..=1, 1..8),
        m_seed in 0usize..100,
    ) {
        let k = tail.len();
        let m = 1 + m_seed % k;
        let all: Vec<u8> = prefix.iter().chain(&tail).copied().collect();
        let fails = tail.iter().filter(|&&s| s == 1).count();
        prop_assert_eq!(vote(&all, k, m), fails >= m);
        prop_assert_eq!(vote(&all, k, m), vote(&tail, k, m));
        let mut v = Voter::new(k, m);
        let last = all.iter().map(|&s| v.push(s)).last().unwrap();
        prop_assert_eq!(last, fails >= m);
    }

    /// Every window used for training passes the trained baseline.
    #[test]
    fn training_windows_pass_their_baseline(
        windows in proptest::collection::vec(
            proptest::collection::btree_map(0u32..20, 0u64..200, 0..6), 1..10),
        slack in 0.0f64..0.5,
    ) {
        let b = train_baseline(&windows, slack).unwrap();
        for w in &windows {
            prop_assert_eq!(check_syscalls(w, &b), 0);
        }
        let union: std::collections::BTreeSet<u32> = windows.iter().flat_map(|w| w.keys().copied()).collect();
        prop_assert_eq!(&b.allowed, &union);
        let text = b.to_string();
        prop_assert_eq!(text.parse::<unitguard::mape::SyscallBaseline>().unwrap(), b);
    }
}

#[test]
fn doubled_count_leaves_the_envelope() {
    let windows: Vec<BTreeMap<u32, u64>> = (0..10).map(|i| BTreeMap::from([(0, 40 + i), (1, 25)])).collect();
    let b = train_baseline(&windows, 0.1).unwrap();
    let max = windows.iter().map(|w| w[&0]).max().unwrap();
    assert_eq!(check_syscalls(&BTreeMap::from([(0, 2 * max), (1, 25)]), &b), 1);
    assert_eq!(check_syscalls(&windows[3], &b), 0);
}
