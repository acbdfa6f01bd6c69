//! Brute-force reference implementations shared by the oracle and
//! acceptance test targets. Everything here trades efficiency for being
//! obviously correct.

#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ====================== edit distance BFS oracle ======================

/// All sequences over `alphabet_size` symbols with length <= `max_len`.
pub fn all_sequences(alphabet_size: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for sym in 0..alphabet_size {
                let mut extended = seq.clone();
                extended.push(sym);
                next.push(extended);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Single-edit neighbours of a sequence: every insertion, deletion,
/// substitution and adjacent transposition.
pub fn neighbours(seq: &[u8], alphabet_size: u8) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for pos in 0..=seq.len() {
        for sym in 0..alphabet_size {
            let mut inserted = seq.to_vec();
            inserted.insert(pos, sym);
            out.push(inserted);
        }
    }
    for pos in 0..seq.len() {
        let mut deleted = seq.to_vec();
        deleted.remove(pos);
        out.push(deleted);
        for sym in 0..alphabet_size {
            if sym != seq[pos] {
                let mut substituted = seq.to_vec();
                substituted[pos] = sym;
                out.push(substituted);
            }
        }
    }
    for pos in 0..seq.len().saturating_sub(1) {
        if seq[pos] != seq[pos + 1] {
            let mut swapped = seq.to_vec();
            swapped.swap(pos, pos + 1);
            out.push(swapped);
        }
    }
    out
}

/// Minimum edit-script length from `source` to every sequence reachable
/// within `max_depth` edits.
pub fn bfs_distances(
    source: &[u8],
    alphabet_size: u8,
    max_depth: usize,
) -> HashMap<Vec<u8>, usize> {
    let mut dist: HashMap<Vec<u8>, usize> = HashMap::new();
    dist.insert(source.to_vec(), 0);
    let mut queue = VecDeque::new();
    queue.push_back(source.to_vec());
    while let Some(state) = queue.pop_front() {
        let d = dist[&state];
        if d == max_depth {
            continue;
        }
        for next in neighbours(&state, alphabet_size) {
            if !dist.contains_key(&next) {
                dist.insert(next.clone(), d + 1);
                queue.push_back(next);
            }
        }
    }
    dist
}

// ====================== earth mover's distance oracle ======================

/// Expands a count histogram into one position per unit of mass.
pub fn unit_positions(counts: &[u32]) -> Vec<usize> {
    let mut out = Vec::new();
    for (bin, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            out.push(bin);
        }
    }
    out
}

/// Exhaustive minimum-cost matching between equal-mass histograms: tries
/// every permutation of the target units against the source units.
pub fn brute_force_emd(a: &[u32], b: &[u32]) -> f64 {
    let source = unit_positions(a);
    let mut target = unit_positions(b);
    assert_eq!(source.len(), target.len(), "oracle needs equal total mass");
    let mut best = u64::MAX;
    permute(&mut target, 0, &mut |perm| {
        let cost: u64 = source
            .iter()
            .zip(perm.iter())
            .map(|(&s, &t)| (s as i64 - t as i64).unsigned_abs())
            .sum();
        best = best.min(cost);
    });
    best as f64
}

/// Heap-style recursion, calling `visit` on every permutation of `items`.
pub fn permute(items: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Random equal-mass histogram pairs over `bins` bins.
pub fn random_equal_mass_pair(
    rng: &mut ChaCha8Rng,
    bins: usize,
    mass: u32,
) -> (Vec<u32>, Vec<u32>) {
    let mut scatter = |mass: u32| {
        let mut counts = vec![0u32; bins];
        for _ in 0..mass {
            let bin = rng.gen_range(0..bins);
            counts[bin] += 1;
        }
        counts
    };
    (scatter(mass), scatter(mass))
}
