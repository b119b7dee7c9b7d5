//! Seeded per-database hold-out of query history.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::model::BenchmarkItem;

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub history: Vec<BenchmarkItem>,
    pub test: Vec<BenchmarkItem>,
}

/// Numeric ids order numerically, everything else lexically after them.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Number of history items drawn from a database with `n` items.
pub fn history_size(n: usize, ratio: f64) -> usize {
    if n < 2 {
        return n;
    }
    // The epsilon keeps 0.2 * 10 at 2 instead of 3 after rounding error.
    let k = (ratio * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n - 1)
}

fn db_rng(seed: u64, db_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(db_id.as_bytes());
    let mut salt = [0u8; 8];
    salt.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(salt))
}

/// Holds out `ceil(ratio * n)` items of every database as query history;
/// the rest form the test set. Each database always keeps at least one test
/// item unless it has only one item in total. The result does not depend
/// on input order: both halves are sorted by db id and then item id.
pub fn split_hint_history(items: &[BenchmarkItem], ratio: f64, seed: u64) -> Split {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be within (0, 1)");
    let mut by_db: BTreeMap<&str, Vec<&BenchmarkItem>> = BTreeMap::new();
    for item in items {
        by_db.entry(&item.query.db_id).or_default().push(item);
    }
    let mut history = Vec::new();
    let mut test = Vec::new();
    for (db_id, mut group) in by_db {
        group.sort_by(|a, b| compare_ids(&a.query.id, &b.query.id));
        let k = history_size(group.len(), ratio);
        if group.len() < 2 {
            log::warn!("database {db_id} has {} item(s); all go to history, none to test", group.len());
        }
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.shuffle(&mut db_rng(seed, db_id));
        let mut picked = vec![false; group.len()];
        for &i in &order[..k] {
            picked[i] = true;
        }
        for (item, p) in group.into_iter().zip(picked) {
            if p {
                history.push(item.clone());
            } else {
                test.push(item.clone());
            }
        }
    }
    Split { history, test }
}
