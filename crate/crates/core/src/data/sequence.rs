//! Construction of (history, target) training sequences.

use std::collections::HashMap;

use crate::data::{Interaction, UserSequence};

/// Default cap on history length; the most recent items are kept.
pub const DEFAULT_MAX_LEN: usize = 50;

/// Output of [`build_sequences`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBuild {
    pub sequences: Vec<UserSequence>,
    /// Users dropped because they had fewer than two interactions.
    pub skipped_users: usize,
}

/// Groups interactions per user, sorts them by (timestamp, input order),
/// and splits the last item off as the prediction target.
///
/// Histories longer than `max_len` keep only the most recent `max_len`
/// items. Users with fewer than two interactions cannot form a (x, y) pair
/// and are counted in `skipped_users`. Sequences come out in order of each
/// user's first appearance in the input.
pub fn build_sequences(interactions: &[Interaction], max_len: usize) -> SequenceBuild {
    let mut order: Vec<&str> = Vec::new();
    let mut by_user: HashMap<&str, Vec<&Interaction>> = HashMap::new();
    for it in interactions {
        let entry = by_user.entry(it.user_id.as_str()).or_default();
        if entry.is_empty() {
            order.push(it.user_id.as_str());
        }
        entry.push(it);
    }

    let mut sequences = Vec::new();
    let mut skipped_users = 0;
    for user in order {
        let mut rows = by_user.remove(user).unwrap();
        if rows.len() < 2 {
            skipped_users += 1;
            continue;
        }
        // Stable sort: equal timestamps keep input-file order.
        rows.sort_by_key(|r| r.timestamp);
        let target = rows.pop().unwrap().item_id.clone();
        let start = rows.len().saturating_sub(max_len);
        let history = rows[start..].iter().map(|r| r.item_id.clone()).collect();
        sequences.push(UserSequence {
            user_id: rows[0].user_id.clone(),
            history,
            target,
        });
    }
    SequenceBuild {
        sequences,
        skipped_users,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ItemId, UserId};

    fn row(u: &str, i: &str, t: i64) -> Interaction {
        Interaction {
            user_id: UserId::new(u),
            item_id: ItemId::new(i),
            timestamp: t,
        }
    }

    fn ids(v: &[&str]) -> Vec<ItemId> {
        v.iter().map(|s| ItemId::new(*s)).collect()
    }

    #[test]
    fn last_item_becomes_target() {
        let built = build_sequences(
            &[row("u", "A", 1), row("u", "B", 2), row("u", "C", 3)],
            DEFAULT_MAX_LEN,
        );
        assert_eq!(built.sequences.len(), 1);
        let seq = &built.sequences[0];
        assert_eq!(seq.history, ids(&["A", "B"]));
        assert_eq!(seq.target, ItemId::new("C"));
        assert_eq!(built.skipped_users, 0);
    }

    #[test]
    fn single_interaction_users_are_skipped() {
        let built = build_sequences(&[row("u", "A", 1)], DEFAULT_MAX_LEN);
        assert!(built.sequences.is_empty());
        assert_eq!(built.skipped_users, 1);
    }

    #[test]
    fn equal_timestamps_keep_input_order() {
        // Oracle: a stable sort of the raw rows by timestamp.
        let rows = vec![
            row("u", "B", 5),
            row("u", "A", 5),
            row("u", "D", 9),
            row("u", "C", 5),
        ];
        let mut oracle = rows.clone();
        oracle.sort_by_key(|r| r.timestamp);
        let expected_history: Vec<ItemId> =
            oracle[..3].iter().map(|r| r.item_id.clone()).collect();

        let built = build_sequences(&rows, DEFAULT_MAX_LEN);
        assert_eq!(built.sequences[0].history, expected_history);
        assert_eq!(built.sequences[0].history, ids(&["B", "A", "C"]));
        assert_eq!(built.sequences[0].target, ItemId::new("D"));
    }

    #[test]
    fn long_histories_keep_most_recent_items() {
        let rows: Vec<Interaction> = (0..10).map(|t| row("u", &format!("i{t}"), t)).collect();
        let built = build_sequences(&rows, 4);
        let seq = &built.sequences[0];
        assert_eq!(seq.history, ids(&["i5", "i6", "i7", "i8"]));
        assert_eq!(seq.target, ItemId::new("i9"));
    }

    #[test]
    fn interleaved_users_come_out_in_first_appearance_order() {
        let rows = vec![
            row("u2", "A", 1),
            row("u1", "B", 1),
            row("u2", "C", 2),
            row("u1", "D", 2),
        ];
        let built = build_sequences(&rows, DEFAULT_MAX_LEN);
        assert_eq!(built.sequences[0].user_id, UserId::new("u2"));
        assert_eq!(built.sequences[1].user_id, UserId::new("u1"));
    }
}
