use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Fold index for every sample. Each class is shuffled with the seeded
/// generator and dealt round-robin over its fold order. Every class puts
/// `n_c / folds` members in each fold and its `n_c % folds` extras in
/// distinct folds, chosen so that fold sizes differ by at most one and, when
/// possible, every per-class count stays within one sample of
/// `n_c * fold_size / n`.
pub fn stratified_kfold(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!(
            "folds must be at least 2, got {folds}"
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut classes: Vec<Vec<usize>> = (0..num_classes)
        .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    for (class, members) in classes.iter().enumerate() {
        if !members.is_empty() && members.len() < folds {
            return Err(Error::Config(format!(
                "class {class} has {} members, fewer than {folds} folds",
                members.len()
            )));
        }
    }
    let mut rng = seed::rng(seed);
    for members in classes.iter_mut() {
        members.shuffle(&mut rng);
    }

    let n = labels.len();
    let sizes: Vec<usize> = (0..folds)
        .map(|f| n / folds + usize::from(f < n % folds))
        .collect();
    let counts: Vec<usize> = classes.iter().map(Vec::len).collect();
    let extras = choose_extras(&counts, &sizes);

    let mut assignment = vec![usize::MAX; n];
    for (c, members) in classes.iter().enumerate() {
        let mut order = extras[c].clone();
        order.extend((0..folds).filter(|f| !extras[c].contains(f)));
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = order[j % folds];
        }
    }
    Ok(assignment)
}

/// Whether class `c` (with `n_c` members) may take an extra member in a fold
/// of `size`, and whether it must. Exact integer forms of
/// `|count - n_c * size / n| <= 1`.
fn extra_rules(n_c: usize, folds: usize, size: usize, n: usize) -> (bool, bool) {
    let r = (n_c % folds) as i128;
    let (n_c, n, f, s) = (n_c as i128, n as i128, folds as i128, size as i128);
    let delta = f * s - n;
    let allowed = r * n + n_c * delta >= 0;
    let required = r * n + n_c * delta > n * f;
    (allowed, required)
}

/// Folds receiving one extra member, per class. Searches assignments that
/// satisfy [`extra_rules`] and fold sizes; falls back to filling the folds
/// with the most room.
fn choose_extras(counts: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let folds = sizes.len();
    let n: usize = counts.iter().sum();
    let base: usize = counts.iter().map(|c| c / folds).sum();
    let room: Vec<usize> = sizes.iter().map(|s| s - base).collect();
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..counts.len()).collect();
        o.sort_by_key(|&c| (counts[c] % folds, c));
        o
    };
    let mut chosen = vec![Vec::new(); counts.len()];
    let mut budget = 200_000usize;
    let mut search_room = room.clone();
    if search(
        0,
        &order,
        counts,
        sizes,
        n,
        &mut search_room,
        &mut chosen,
        &mut budget,
    ) {
        return chosen;
    }
    let mut room = room;
    for &c in &order {
        let mut by_room: Vec<usize> = (0..folds).collect();
        by_room.sort_by_key(|&f| (std::cmp::Reverse(room[f]), f));
        let mut pick = by_room[..counts[c] % folds].to_vec();
        pick.sort_unstable();
        for &f in &pick {
            room[f] -= 1;
        }
        chosen[c] = pick;
    }
    chosen
}

#[allow(clippy::too_many_arguments)]
fn search(
    depth: usize,
    order: &[usize],
    counts: &[usize],
    sizes: &[usize],
    n: usize,
    room: &mut [usize],
    chosen: &mut [Vec<usize>],
    budget: &mut usize,
) -> bool {
    let Some(&c) = order.get(depth) else {
        return room.iter().all(|&r| r == 0);
    };
    let folds = sizes.len();
    let need = counts[c] % folds;
    let mut forced = Vec::new();
    let mut free = Vec::new();
    for (f, &size) in sizes.iter().enumerate() {
        let (allowed, required) = extra_rules(counts[c], folds, size, n);
        if required {
            forced.push(f);
        } else if allowed {
            free.push(f);
        }
    }
    if forced.len() > need
        || forced.len() + free.len() < need
        || forced.iter().any(|&f| room[f] == 0)
    {
        return false;
    }
    free.sort_by_key(|&f| (std::cmp::Reverse(room[f]), f));
    let k = need - forced.len();
    let mut pick: Vec<usize> = (0..k).collect();
    loop {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let mut set: Vec<usize> = forced
            .iter()
            .copied()
            .chain(pick.iter().map(|&i| free[i]))
            .collect();
        if set.iter().all(|&f| room[f] > 0) {
            set.sort_unstable();
            for &f in &set {
                room[f] -= 1;
            }
            chosen[c] = set.clone();
            if search(depth + 1, order, counts, sizes, n, room, chosen, budget) {
                return true;
            }
            for &f in &set {
                room[f] += 1;
            }
        }
        // next k-combination of free indices
        let mut i = k;
        loop {
            if i == 0 {
                return false;
            }
            i -= 1;
            if pick[i] < free.len() - k + i {
                break;
            }
        }
        pick[i] += 1;
        for j in i + 1..k {
            pick[j] = pick[j - 1] + 1;
        }
    }
}

/// `(train, test)` index lists for fold `f`.
pub fn split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}
