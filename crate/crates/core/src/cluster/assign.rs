//! Turning mixture posteriors into size-bounded partitions.

use std::collections::BTreeMap;

use super::gmm::{fit_gmm, GmmModel};
use super::{mix_seed, ReducedMatrix};

pub const SPLIT_ATTEMPTS: u64 = 5;

fn groups_from_labels(labels: &[usize], members: &[usize]) -> Vec<Vec<usize>> {
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&label, &idx) in labels.iter().zip(members) {
        by_label.entry(label).or_default().push(idx);
    }
    by_label.into_values().collect()
}

/// Deals `members` into `parts` groups in turn.
pub fn round_robin(members: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let parts = parts.max(1);
    let mut out = vec![Vec::new(); parts];
    for (i, &m) in members.iter().enumerate() {
        out[i % parts].push(m);
    }
    out.retain(|g| !g.is_empty());
    out
}

/// Splits one oversized group with a fresh mixture of `ceil(size/cap)`
/// components; gives up after [`SPLIT_ATTEMPTS`] seeds that fail to separate
/// anything and deals the members round-robin instead.
fn split_group(m: &ReducedMatrix, members: &[usize], cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let parts = members.len().div_ceil(cap);
    let sub = m.select(members);
    for attempt in 0..SPLIT_ATTEMPTS {
        let Ok(model) = fit_gmm(&sub, parts, mix_seed(seed, attempt)) else { break };
        let groups = groups_from_labels(&model.predict(&sub), members);
        if groups.len() >= 2 {
            return groups;
        }
    }
    round_robin(members, parts)
}

/// Argmax assignment followed by recursive splitting of every group larger
/// than `cap`. Returned groups are non-empty, at most `cap` long, cover every
/// row exactly once, and are ordered by their smallest member.
pub fn assign_with_cap(model: &GmmModel, m: &ReducedMatrix, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..m.rows).collect();
    let mut pending = groups_from_labels(&model.predict(m), &all);
    let mut done = Vec::new();
    let mut round = 0u64;
    while let Some(group) = pending.pop() {
        if group.len() <= cap {
            done.push(group);
        } else {
            round += 1;
            pending.extend(split_group(m, &group, cap, mix_seed(seed, 1000 + round)));
        }
    }
    sort_groups(&mut done);
    done
}

pub(crate) fn sort_groups(groups: &mut [Vec<usize>]) {
    for g in groups.iter_mut() {
        g.sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Partitions all rows into exactly `target` non-empty groups of at most
/// `max(cap, ceil(n / target))` members.
///
/// Mixture groups are merged (closest centroids first) until their minimal
/// part counts fit the target, spare parts go to the groups with the highest
/// members-per-part ratio, and each group is then divided into its parts with
/// a capacity-constrained assignment over a fresh mixture's posteriors.
pub fn partition_exact(m: &ReducedMatrix, target: usize, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = m.rows;
    let target = target.clamp(1, n.max(1));
    let cap = cap.max(n.div_ceil(target));
    let all: Vec<usize> = (0..n).collect();
    if target == 1 {
        return vec![all];
    }
    let mut groups = match fit_gmm(m, target, seed) {
        Ok(model) => groups_from_labels(&model.predict(m), &all),
        Err(_) => vec![all.clone()],
    };

    let needed = |gs: &[Vec<usize>]| gs.iter().map(|g| g.len().div_ceil(cap)).sum::<usize>();
    while needed(&groups) > target {
        let centroids: Vec<Vec<f64>> = groups.iter().map(|g| m.centroid(g)).collect();
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let d = sq_dist(&centroids[a], &centroids[b]);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let absorbed = groups.remove(best.2);
        groups[best.1].extend(absorbed);
    }

    let mut quota: Vec<usize> = groups.iter().map(|g| g.len().div_ceil(cap)).collect();
    for _ in quota.iter().sum::<usize>()..target {
        let pick = (0..groups.len())
            .filter(|&i| quota[i] < groups[i].len())
            .max_by(|&a, &b| {
                let ra = groups[a].len() as f64 / quota[a] as f64;
                let rb = groups[b].len() as f64 / quota[b] as f64;
                ra.total_cmp(&rb).then(b.cmp(&a))
            })
            .expect("n >= target leaves a divisible group");
        quota[pick] += 1;
    }

    let mut out = Vec::with_capacity(target);
    for (gi, (group, q)) in groups.into_iter().zip(quota).enumerate() {
        if q == 1 {
            out.push(group);
        } else {
            out.extend(split_exact(m, &group, q, cap, mix_seed(seed, gi as u64 + 1)));
        }
    }
    refine(m, &mut out, cap);
    sort_groups(&mut out);
    out
}

pub const REFINE_PASSES: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|S|^2 / n`: the part of a group's sum of squares that depends on grouping.
fn spread_term(sum: &[f64], n: usize) -> f64 {
    dot(sum, sum) / n as f64
}

/// Local search on the within-group sum of squares. Single moves respect
/// `cap` and never empty a group; swaps keep sizes. Only strict improvements
/// are taken, so the group count and bounds are invariant and it terminates.
fn refine(m: &ReducedMatrix, groups: &mut [Vec<usize>], cap: usize) {
    const EPS: f64 = 1e-12;
    let dims = m.cols;
    let sum_of = |g: &[usize]| {
        let mut s = vec![0.0; dims];
        for &i in g {
            s.iter_mut().zip(m.row(i)).for_each(|(a, b)| *a += b);
        }
        s
    };
    let mut sums: Vec<Vec<f64>> = groups.iter().map(|g| sum_of(g)).collect();
    let shifted = |s: &[f64], minus: &[f64], plus: &[f64]| -> Vec<f64> {
        s.iter().zip(minus).zip(plus).map(|((a, b), c)| a - b + c).collect()
    };
    let zero = vec![0.0; dims];
    for _ in 0..REFINE_PASSES {
        let mut improved = false;
        for a in 0..groups.len() {
            for b in 0..groups.len() {
                if a == b {
                    continue;
                }
                let mut ia = 0;
                while ia < groups[a].len() {
                    let i = groups[a][ia];
                    let xi = m.row(i);
                    let (na, nb) = (groups[a].len(), groups[b].len());
                    let before = spread_term(&sums[a], na) + spread_term(&sums[b], nb);
                    // Single move a -> b.
                    if na > 1 && nb < cap {
                        let sa = shifted(&sums[a], xi, &zero);
                        let sb = shifted(&sums[b], &zero, xi);
                        let after = spread_term(&sa, na - 1) + spread_term(&sb, nb + 1);
                        if after > before + EPS {
                            groups[a].swap_remove(ia);
                            groups[b].push(i);
                            sums[a] = sa;
                            sums[b] = sb;
                            improved = true;
                            continue;
                        }
                    }
                    // Best swap partner in b.
                    let mut best: Option<(f64, usize)> = None;
                    for (jb, &j) in groups[b].iter().enumerate() {
                        let xj = m.row(j);
                        let after = spread_term(&shifted(&sums[a], xi, xj), na) + spread_term(&shifted(&sums[b], xj, xi), nb);
                        if after > before + EPS && best.is_none_or(|(v, _)| after > v) {
                            best = Some((after, jb));
                        }
                    }
                    if let Some((_, jb)) = best {
                        let j = groups[b][jb];
                        sums[a] = shifted(&sums[a], xi, m.row(j));
                        sums[b] = shifted(&sums[b], m.row(j), xi);
                        groups[a][ia] = j;
                        groups[b][jb] = i;
                        improved = true;
                    }
                    ia += 1;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Divides `members` into exactly `parts` non-empty groups of at most `cap`.
fn split_exact(m: &ReducedMatrix, members: &[usize], parts: usize, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let sub = m.select(members);
    let log_resp = match fit_gmm(&sub, parts, seed) {
        Ok(model) => model.log_responsibilities(&sub),
        Err(_) => vec![vec![0.0; parts]; members.len()],
    };
    let mut pairs: Vec<(f64, usize, usize)> = log_resp
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(c, &v)| (v, i, c)))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut owner = vec![usize::MAX; members.len()];
    let mut sizes = vec![0usize; parts];
    for &(_, i, c) in &pairs {
        if owner[i] == usize::MAX && sizes[c] < cap {
            owner[i] = c;
            sizes[c] += 1;
        }
    }
    // Fill empty parts from the largest donors, taking the member that fits
    // the empty part best.
    for empty in 0..parts {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..parts).max_by_key(|&c| (sizes[c], std::cmp::Reverse(c))).expect("parts > 0");
        let moved = (0..members.len())
            .filter(|&i| owner[i] == donor)
            .max_by(|&a, &b| log_resp[a][empty].total_cmp(&log_resp[b][empty]).then(b.cmp(&a)))
            .expect("donor has more than one member");
        owner[moved] = empty;
        sizes[donor] -= 1;
        sizes[empty] += 1;
    }
    let mut out = vec![Vec::new(); parts];
    for (i, &c) in owner.iter().enumerate() {
        out[c].push(members[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ReducerKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, seed: u64) -> ReducedMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        ReducedMatrix::from_rows(&rows, ReducerKind::Pca).unwrap()
    }

    fn assert_partition(groups: &[Vec<usize>], n: usize) {
        let mut seen: Vec<usize> = groups.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        assert!(groups.iter().all(|g| !g.is_empty()));
    }

    #[test]
    fn identical_points_fall_back_to_round_robin() {
        let m = ReducedMatrix::from_rows(&vec![vec![0.0, 0.0]; 13], ReducerKind::Pca).unwrap();
        let model = fit_gmm(&m, 2, 0).unwrap();
        let groups = assign_with_cap(&model, &m, 6, 0);
        assert_partition(&groups, 13);
        let mut sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, [4, 4, 5]);
    }

    #[test]
    fn balanced_groups_are_unchanged() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![if i < 6 { 0.0 } else { 100.0 } + i as f64 * 0.01]).collect();
        let m = ReducedMatrix::from_rows(&rows, ReducerKind::Pca).unwrap();
        let model = fit_gmm(&m, 2, 4).unwrap();
        let groups = assign_with_cap(&model, &m, 6, 4);
        assert_eq!(groups, vec![(0..6).collect::<Vec<_>>(), (6..12).collect()]);
    }

    #[test]
    fn cap_holds_on_random_data() {
        for (n, seed) in [(7, 1), (50, 2), (131, 3)] {
            let m = random_matrix(n, seed);
            let model = fit_gmm(&m, (n / 6).max(1), seed).unwrap();
            let groups = assign_with_cap(&model, &m, 6, seed);
            assert_partition(&groups, n);
            assert!(groups.iter().all(|g| g.len() <= 6));
        }
    }

    #[test]
    fn exact_partition_counts() {
        for (n, target) in [(100, 16), (16, 2), (37, 6), (6, 1), (12, 12)] {
            let m = random_matrix(n, n as u64);
            let groups = partition_exact(&m, target, 6, 1);
            assert_partition(&groups, n);
            assert_eq!(groups.len(), target);
            let cap = 6usize.max(n.div_ceil(target));
            assert!(groups.iter().all(|g| g.len() <= cap));
        }
    }

    #[test]
    fn refine_separates_interleaved_groups() {
        // Two sites, each group holding half of each: equal centroids.
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![if i % 2 == 0 { 0.0 } else { 5.0 }, 1.0]).collect();
        let m = ReducedMatrix::from_rows(&rows, ReducerKind::Pca).unwrap();
        let mut groups = vec![vec![0, 1, 2, 3, 4, 5], vec![6, 7, 8, 9, 10, 11]];
        refine(&m, &mut groups, 6);
        assert_partition(&groups, 12);
        for g in &groups {
            assert_eq!(g.len(), 6);
            assert!(g.iter().all(|&i| i % 2 == g[0] % 2), "{groups:?}");
        }
    }
}
