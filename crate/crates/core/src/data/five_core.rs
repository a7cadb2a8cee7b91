//! 5-core filtering of interaction tables.

use std::collections::HashMap;

use crate::data::Interaction;

const CORE: usize = 5;

/// Iteratively removes users and items with fewer than five interactions
/// until none remain, returning the surviving rows in input order.
///
/// The result is the unique maximal fixpoint: applying the filter twice
/// yields the same table.
pub fn five_core_filter(interactions: &[Interaction]) -> Vec<Interaction> {
    k_core_filter(interactions, CORE)
}

fn k_core_filter(interactions: &[Interaction], k: usize) -> Vec<Interaction> {
    let mut user_count: HashMap<&str, usize> = HashMap::new();
    let mut item_count: HashMap<&str, usize> = HashMap::new();
    for it in interactions {
        *user_count.entry(it.user_id.as_str()).or_default() += 1;
        *item_count.entry(it.item_id.as_str()).or_default() += 1;
    }

    let mut alive = vec![true; interactions.len()];
    // Peel: drop every row touching a deficient user or item, decrement the
    // counts of the other endpoint, repeat until stable.
    loop {
        let mut changed = false;
        for (row, it) in interactions.iter().enumerate() {
            if !alive[row] {
                continue;
            }
            let u = user_count[it.user_id.as_str()];
            let i = item_count[it.item_id.as_str()];
            if u < k || i < k {
                alive[row] = false;
                *user_count.get_mut(it.user_id.as_str()).unwrap() -= 1;
                *item_count.get_mut(it.item_id.as_str()).unwrap() -= 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    interactions
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(it, _)| it.clone())
        .collect()
}
