//! Random batch partitions and the connectivity statistics built on them.
//!
//! A partition splits particles `0..N` into `K = ⌈N/P⌉` batches: `K − 1` of
//! size `P` and one of size `N − P(K − 1)`. Partitions are unordered: two
//! partitions with the same batches in a different order are equal.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::ensemble::RngStream;
use crate::error::{config, usage, Error, Result};
use crate::exec::{map_indexed, Execution};

/// One random batch partition.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BatchPartition {
    batch_size: usize,
    /// Batches with sorted members, ordered by smallest member.
    batches: Vec<Vec<usize>>,
    /// `membership[i]` is the index into `batches` of the batch holding `i`.
    membership: Vec<usize>,
}

impl BatchPartition {
    /// Builds and validates a partition from explicit batches.
    pub fn from_batches(particles: usize, batch_size: usize, batches: Vec<Vec<usize>>) -> Result<Self> {
        check_sizes(particles, batch_size)?;
        let mut batches: Vec<Vec<usize>> = batches
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        if batches.iter().any(|b| b.is_empty()) {
            return Err(config("empty batch"));
        }
        batches.sort_unstable_by_key(|b| b[0]);
        let mut membership = vec![usize::MAX; particles];
        for (k, b) in batches.iter().enumerate() {
            for &i in b {
                if i >= particles {
                    return Err(config(format!("particle {i} out of range 0..{particles}")));
                }
                if membership[i] != usize::MAX {
                    return Err(config(format!("particle {i} appears in two batches")));
                }
                membership[i] = k;
            }
        }
        if membership.contains(&usize::MAX) {
            return Err(config("batches do not cover every particle"));
        }
        let full = batches.iter().filter(|b| b.len() == batch_size).count();
        let remainder = particles % batch_size;
        let expected_full = particles / batch_size;
        let sizes_ok = batches.iter().all(|b| b.len() <= batch_size)
            && full == expected_full
            && batches.len() == expected_full + usize::from(remainder > 0);
        if !sizes_ok {
            return Err(config(format!(
                "batch sizes do not match N = {particles}, P = {batch_size}"
            )));
        }
        Ok(Self { batch_size, batches, membership })
    }

    fn from_sorted_unchecked(particles: usize, batch_size: usize, mut batches: Vec<Vec<usize>>) -> Self {
        batches.sort_unstable_by_key(|b| b[0]);
        let mut membership = vec![0; particles];
        for (k, b) in batches.iter().enumerate() {
            for &i in b {
                membership[i] = k;
            }
        }
        Self { batch_size, batches, membership }
    }

    /// The single batch `{0..N}`.
    pub fn full(particles: usize) -> Self {
        Self::from_sorted_unchecked(particles, particles, vec![(0..particles).collect()])
    }

    pub fn particles(&self) -> usize {
        self.membership.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    /// Index of the batch containing particle `i`.
    pub fn batch_index(&self, i: usize) -> usize {
        self.membership[i]
    }

    /// The batch containing particle `i`.
    pub fn batch_of(&self, i: usize) -> Result<&[usize]> {
        let k = self
            .membership
            .get(i)
            .ok_or_else(|| usage(format!("particle {i} out of range 0..{}", self.particles())))?;
        Ok(&self.batches[*k])
    }

    pub fn same_batch(&self, i: usize, j: usize) -> bool {
        self.membership[i] == self.membership[j]
    }

    /// `1,3|0,2` style rendering, batches ordered by smallest member.
    pub fn to_text(&self) -> String {
        self.batches
            .iter()
            .map(|b| b.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("|")
    }
}

fn check_sizes(particles: usize, batch_size: usize) -> Result<()> {
    if particles == 0 {
        return Err(config("need at least one particle"));
    }
    if batch_size == 0 || batch_size > particles {
        return Err(config(format!("batch size must satisfy 1 <= P <= N, got P = {batch_size}, N = {particles}")));
    }
    Ok(())
}

/// Uniform draw from the set of partitions: shuffle `0..N`, then cut into consecutive blocks of `P`.
///
/// Every unordered partition is hit by the same number of permutations, so
/// the induced law is uniform.
pub fn sample_partition<R: Rng + ?Sized>(particles: usize, batch_size: usize, rng: &mut R) -> Result<BatchPartition> {
    check_sizes(particles, batch_size)?;
    let mut order: Vec<usize> = (0..particles).collect();
    order.shuffle(rng);
    Ok(partition_from_order(particles, batch_size, &order))
}

/// Cuts a permutation into consecutive batches.
pub(crate) fn partition_from_order(particles: usize, batch_size: usize, order: &[usize]) -> BatchPartition {
    let batches = order
        .chunks(batch_size)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect();
    BatchPartition::from_sorted_unchecked(particles, batch_size, batches)
}

/// Number of unordered partitions of `N` into blocks of `P` (last block smaller), as f64.
pub fn partition_count(particles: usize, batch_size: usize) -> Result<f64> {
    check_sizes(particles, batch_size)?;
    let ln_fact = |n: usize| (1..=n).map(|k| (k as f64).ln()).sum::<f64>();
    let full = particles / batch_size;
    let rem = particles % batch_size;
    let ln = ln_fact(particles) - full as f64 * ln_fact(batch_size) - ln_fact(full) - ln_fact(rem);
    Ok(ln.exp().round())
}

/// All partitions of `0..N`, each exactly once. Errors when there are more than `cap`.
pub fn enumerate_partitions(particles: usize, batch_size: usize, cap: usize) -> Result<Vec<BatchPartition>> {
    let count = partition_count(particles, batch_size)?;
    if count > cap as f64 {
        return Err(Error::Resource(format!(
            "{count} partitions for N = {particles}, P = {batch_size} exceeds the enumeration cap {cap}"
        )));
    }
    let rem = particles % batch_size;
    let mut out = Vec::with_capacity(count as usize);
    let mut blocks = Vec::new();
    let remaining: Vec<usize> = (0..particles).collect();
    enumerate_rec(&remaining, batch_size, rem, rem == 0, &mut blocks, &mut |blocks| {
        out.push(BatchPartition::from_sorted_unchecked(particles, batch_size, blocks.to_vec()));
    });
    Ok(out)
}

fn enumerate_rec(
    remaining: &[usize],
    batch_size: usize,
    rem: usize,
    small_used: bool,
    blocks: &mut Vec<Vec<usize>>,
    emit: &mut dyn FnMut(&[Vec<usize>]),
) {
    let Some((&first, rest)) = remaining.split_first() else {
        emit(blocks);
        return;
    };
    let mut sizes = Vec::with_capacity(2);
    if remaining.len() >= batch_size && (remaining.len() - batch_size >= rem || small_used) {
        sizes.push(batch_size);
    }
    if !small_used && rem > 0 {
        sizes.push(rem);
    }
    for size in sizes {
        let now_small_used = small_used || (size == rem && rem != batch_size);
        if !now_small_used && remaining.len() - size < rem {
            continue;
        }
        for_each_combination(rest, size - 1, &mut |chosen| {
            let mut block = Vec::with_capacity(size);
            block.push(first);
            block.extend_from_slice(chosen);
            let left: Vec<usize> = rest.iter().copied().filter(|x| !chosen.contains(x)).collect();
            blocks.push(block);
            enumerate_rec(&left, batch_size, rem, now_small_used, blocks, emit);
            blocks.pop();
        });
    }
}

fn for_each_combination(items: &[usize], k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for idx in start..items.len() {
            if items.len() - idx < k - cur.len() {
                break;
            }
            cur.push(items[idx]);
            rec(items, k, idx + 1, cur, f);
            cur.pop();
        }
    }
    let mut cur = Vec::with_capacity(k);
    rec(items, k, 0, &mut cur, f);
}

/// Partitions for consecutive steps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionSchedule {
    partitions: Vec<BatchPartition>,
}

impl PartitionSchedule {
    pub fn new(partitions: Vec<BatchPartition>) -> Self {
        Self { partitions }
    }

    /// `steps` independent uniform partitions.
    pub fn sample<R: Rng + ?Sized>(particles: usize, batch_size: usize, steps: usize, rng: &mut R) -> Result<Self> {
        let partitions = (0..steps)
            .map(|_| sample_partition(particles, batch_size, rng))
            .collect::<Result<_>>()?;
        Ok(Self { partitions })
    }

    pub fn push(&mut self, p: BatchPartition) {
        self.partitions.push(p);
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn partitions(&self) -> &[BatchPartition] {
        &self.partitions
    }

    /// One line per step: `<step> <batch>|<batch>|…`, members comma-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (n, p) in self.partitions.iter().enumerate() {
            let _ = writeln!(out, "{n} {}", p.to_text());
        }
        out
    }

    pub fn from_text(text: &str, particles: usize, batch_size: usize) -> Result<Self> {
        let mut partitions = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| config(format!("schedule line {}: {what}", lineno + 1));
            let (step, body) = line.trim().split_once(' ').ok_or_else(|| bad("missing batches"))?;
            let step: usize = step.parse().map_err(|_| bad("bad step index"))?;
            if step != partitions.len() {
                return Err(bad("steps must be consecutive from 0"));
            }
            let batches = body
                .trim()
                .split('|')
                .map(|b| b.split(',').map(|i| i.trim().parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad particle index"))?;
            partitions.push(BatchPartition::from_batches(particles, batch_size, batches)?);
        }
        Ok(Self { partitions })
    }
}

/// Pair co-batching counts over a slice of partitions: `min_{i,j} |{r : [i]_r = [j]_r}|`.
///
/// Pairs include `i = j`, so the value never exceeds the window length.
fn min_pair_count(parts: &[BatchPartition]) -> usize {
    let m = parts.len();
    let Some(first) = parts.first() else { return 0 };
    let n = first.particles();
    let mut counts = vec![0usize; n * n];
    for p in parts {
        for b in p.batches() {
            for (a, &i) in b.iter().enumerate() {
                for &j in &b[a + 1..] {
                    counts[i * n + j] += 1;
                }
            }
        }
    }
    let mut min = m;
    for i in 0..n {
        for j in i + 1..n {
            min = min.min(counts[i * n + j]);
        }
    }
    min
}

/// Connectivity statistic over the steps `start..start + len` of the schedule.
pub fn connectivity_count(schedule: &PartitionSchedule, start: usize, len: usize) -> Result<usize> {
    if len == 0 {
        return Ok(0);
    }
    let end = start
        .checked_add(len)
        .filter(|&e| e <= schedule.len())
        .ok_or_else(|| usage(format!("window [{start}, {start}+{len}) exceeds schedule of {} steps", schedule.len())))?;
    Ok(min_pair_count(&schedule.partitions[start..end]))
}

/// Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Expected connectivity over a window of `m0` fresh steps, by Monte Carlo.
///
/// Replicate `k` uses stream `(base_seed, k)`.
pub fn estimate_p_m0(
    particles: usize,
    batch_size: usize,
    m0: usize,
    replicates: usize,
    base_seed: u64,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    check_sizes(particles, batch_size)?;
    if m0 == 0 || replicates == 0 {
        return Err(config("m0 and replicates must be positive"));
    }
    let values = map_indexed(exec, replicates, |k| {
        let mut rng = RngStream::new(base_seed, k as u64);
        let sched = PartitionSchedule::sample(particles, batch_size, m0, &mut rng).expect("sizes checked");
        min_pair_count(sched.partitions()) as f64
    });
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(MonteCarloEstimate { mean, std_error: (var / n).sqrt(), samples: values.len() })
}

/// Exact expected connectivity by enumerating all `|A|^m0` partition sequences.
pub fn exact_p_m0(particles: usize, batch_size: usize, m0: usize, cap: usize) -> Result<f64> {
    if m0 == 0 {
        return Err(config("m0 must be positive"));
    }
    if particles == 1 {
        return Ok(m0 as f64);
    }
    let parts = enumerate_partitions(particles, batch_size, cap)?;
    let total = (parts.len() as f64).powi(m0 as i32);
    if total > cap as f64 {
        return Err(Error::Resource(format!(
            "{total} partition sequences exceed the enumeration cap {cap}"
        )));
    }
    let n = particles;
    let pair_lists: Vec<Vec<usize>> = parts
        .iter()
        .map(|p| {
            let mut v = Vec::new();
            for b in p.batches() {
                for (a, &i) in b.iter().enumerate() {
                    for &j in &b[a + 1..] {
                        v.push(i * n + j);
                    }
                }
            }
            v
        })
        .collect();
    let mut counts = vec![0usize; n * n];
    let mut sum = 0u64;
    exact_rec(&pair_lists, m0, n, &mut counts, &mut sum);
    Ok(sum as f64 / total)
}

fn exact_rec(pair_lists: &[Vec<usize>], depth: usize, n: usize, counts: &mut [usize], sum: &mut u64) {
    if depth == 0 {
        let mut min = usize::MAX;
        for i in 0..n {
            for j in i + 1..n {
                min = min.min(counts[i * n + j]);
            }
        }
        *sum += min as u64;
        return;
    }
    for pairs in pair_lists {
        for &p in pairs {
            counts[p] += 1;
        }
        exact_rec(pair_lists, depth - 1, n, counts, sum);
        for &p in pairs {
            counts[p] -= 1;
        }
    }
}

/// `⌈(N − 1)/(P − 1)⌉`: each particle meets at most `P − 1` others per step.
pub fn m0_lower_bound(particles: usize, batch_size: usize) -> Result<usize> {
    check_sizes(particles, batch_size)?;
    if particles == 1 {
        return Ok(1);
    }
    if batch_size == 1 {
        return Err(Error::NoConnectivity { particles, batch_size });
    }
    Ok((particles - 1).div_ceil(batch_size - 1))
}

const M0_PARTITION_CAP: usize = 200_000;
const M0_NODE_BUDGET: usize = 20_000_000;

/// Smallest `m` for which some `m` partitions together co-batch every pair.
///
/// Exhaustive search over the enumerated partitions; errors with
/// [`Error::Resource`] when the instance is too large to search.
pub fn find_m0(particles: usize, batch_size: usize) -> Result<usize> {
    let lower = m0_lower_bound(particles, batch_size)?;
    if batch_size == particles || particles == 1 {
        return Ok(1);
    }
    let n = particles;
    let pair_total = n * (n - 1) / 2;
    if pair_total > 128 {
        return Err(Error::Resource(format!("exact m0 search supports at most 16 particles, got {n}")));
    }
    let pair_bit = |i: usize, j: usize| -> u128 {
        let idx = i * (2 * n - i - 1) / 2 + (j - i - 1);
        1u128 << idx
    };
    let parts = enumerate_partitions(n, batch_size, M0_PARTITION_CAP)?;
    let masks: Vec<u128> = parts
        .iter()
        .map(|p| {
            let mut m = 0u128;
            for b in p.batches() {
                for (a, &i) in b.iter().enumerate() {
                    for &j in &b[a + 1..] {
                        m |= pair_bit(i, j);
                    }
                }
            }
            m
        })
        .collect();
    let full: u128 = if pair_total == 128 { u128::MAX } else { (1u128 << pair_total) - 1 };
    let per_step = masks[0].count_ones() as usize;
    let mut budget = M0_NODE_BUDGET;
    let mut m = lower;
    loop {
        let mut seen = HashSet::new();
        if cover_search(0, m, full, per_step, &masks, &mut seen, &mut budget)? {
            return Ok(m);
        }
        m += 1;
    }
}

fn cover_search(
    covered: u128,
    steps_left: usize,
    full: u128,
    per_step: usize,
    masks: &[u128],
    seen: &mut HashSet<(u128, usize)>,
    budget: &mut usize,
) -> Result<bool> {
    if covered == full {
        return Ok(true);
    }
    let missing = (full & !covered).count_ones() as usize;
    if steps_left == 0 || missing > steps_left * per_step || !seen.insert((covered, steps_left)) {
        return Ok(false);
    }
    if *budget == 0 {
        return Err(Error::Resource("exact m0 search exceeded its node budget".into()));
    }
    *budget -= 1;
    // Some partition in any covering must co-batch the lowest uncovered pair.
    let target = (full & !covered) & (full & !covered).wrapping_neg();
    for &mask in masks.iter().filter(|&&m| m & target != 0) {
        if cover_search(covered | mask, steps_left - 1, full, per_step, masks, seen, budget)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// A covering sequence found greedily; its length is an upper bound on `m0`.
pub fn m0_greedy_upper_bound(particles: usize, batch_size: usize) -> Result<usize> {
    m0_lower_bound(particles, batch_size)?;
    if batch_size == particles || particles == 1 {
        return Ok(1);
    }
    let n = particles;
    let mut met = vec![false; n * n];
    let mut uncovered = n * (n - 1) / 2;
    let mut steps = 0;
    while uncovered > 0 {
        steps += 1;
        let mut free: Vec<usize> = (0..n).collect();
        while !free.is_empty() {
            let size = batch_size.min(free.len());
            // seed the batch with the particle missing the most partners
            free.sort_by_key(|&i| std::cmp::Reverse((0..n).filter(|&j| j != i && !met[i * n + j]).count()));
            let mut batch = vec![free.remove(0)];
            while batch.len() < size {
                let (pos, _) = free
                    .iter()
                    .enumerate()
                    .max_by_key(|(pos, &c)| (batch.iter().filter(|&&b| !met[b * n + c]).count(), std::cmp::Reverse(*pos)))
                    .expect("free is non-empty");
                batch.push(free.remove(pos));
            }
            for (a, &i) in batch.iter().enumerate() {
                for &j in &batch[a + 1..] {
                    if !met[i * n + j] {
                        met[i * n + j] = true;
                        met[j * n + i] = true;
                        uncovered -= 1;
                    }
                }
            }
        }
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn canonical_key(p: &BatchPartition) -> String {
        p.to_text()
    }

    #[test]
    fn degenerate_batch_sizes() {
        let mut rng = RngStream::new(1, 0);
        let full = sample_partition(5, 5, &mut rng).unwrap();
        assert_eq!(full.batches(), &[vec![0, 1, 2, 3, 4]]);
        assert_eq!(full.batch_of(3).unwrap(), &[0, 1, 2, 3, 4]);
        let single = sample_partition(5, 1, &mut rng).unwrap();
        assert_eq!(single.batches().len(), 5);
        assert_eq!(single.batch_of(2).unwrap(), &[2]);
        assert!(matches!(sample_partition(5, 0, &mut rng), Err(Error::Config(_))));
        assert!(matches!(sample_partition(5, 6, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn batch_membership() {
        let p = BatchPartition::from_batches(4, 2, vec![vec![0, 2], vec![1, 3]]).unwrap();
        assert_eq!(p.batch_of(2).unwrap(), &[0, 2]);
        assert!(matches!(p.batch_of(4), Err(Error::Usage(_))));
        assert!(BatchPartition::from_batches(4, 2, vec![vec![0, 2], vec![1]]).is_err());
        assert!(BatchPartition::from_batches(4, 2, vec![vec![0, 2, 1], vec![3]]).is_err());
    }

    #[test]
    fn sampled_partitions_satisfy_size_invariants() {
        let mut rng = RngStream::new(5, 1);
        for &(n, p) in &[(10, 3), (7, 7), (9, 2), (12, 4), (5, 1)] {
            for _ in 0..2_000 {
                let part = sample_partition(n, p, &mut rng).unwrap();
                let k = n.div_ceil(p);
                assert_eq!(part.batches().len(), k);
                let mut all: Vec<usize> = part.batches().iter().flatten().copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                let small = part.batches().iter().filter(|b| b.len() != p).count();
                assert!(small <= 1);
                assert!(part.batches().iter().all(|b| b.len() <= p));
            }
        }
    }

    #[test]
    fn enumeration_matches_closed_form_counts() {
        // values checked against an independent brute force over permutations
        for &(n, p, count) in &[(4, 2, 3), (6, 3, 10), (5, 2, 15), (4, 3, 4), (6, 2, 15), (5, 3, 10), (7, 3, 70), (6, 4, 15)] {
            let parts = enumerate_partitions(n, p, 10_000).unwrap();
            assert_eq!(parts.len(), count, "N={n} P={p}");
            assert_eq!(partition_count(n, p).unwrap(), count as f64);
            let distinct: HashSet<String> = parts.iter().map(canonical_key).collect();
            assert_eq!(distinct.len(), count);
        }
        assert!(matches!(enumerate_partitions(20, 2, 1000), Err(Error::Resource(_))));
    }

    #[test]
    fn uniform_over_small_partition_sets() {
        // chi-square 99% critical values for |A| - 1 degrees of freedom
        for &(n, p, critical) in &[(4usize, 2usize, 9.210), (5, 2, 29.141), (6, 3, 21.666), (4, 3, 11.345)] {
            let all = enumerate_partitions(n, p, 1000).unwrap();
            let draws = 60_000;
            let mut rng = RngStream::new(77, (n * 10 + p) as u64);
            let mut freq: HashMap<String, usize> = HashMap::new();
            for _ in 0..draws {
                *freq.entry(canonical_key(&sample_partition(n, p, &mut rng).unwrap())).or_default() += 1;
            }
            assert_eq!(freq.len(), all.len());
            let expected = draws as f64 / all.len() as f64;
            let chi2: f64 = all
                .iter()
                .map(|q| {
                    let o = *freq.get(&canonical_key(q)).unwrap_or(&0) as f64;
                    (o - expected).powi(2) / expected
                })
                .sum();
            assert!(chi2 < critical, "N={n} P={p} chi2={chi2}");
        }
    }

    fn brute_connectivity(parts: &[BatchPartition]) -> usize {
        let n = parts[0].particles();
        let mut best = parts.len();
        for i in 0..n {
            for j in 0..n {
                let c = parts.iter().filter(|p| p.same_batch(i, j)).count();
                best = best.min(c);
            }
        }
        best
    }

    #[test]
    fn connectivity_examples() {
        let mut rng = RngStream::new(2, 0);
        let full = PartitionSchedule::sample(6, 6, 8, &mut rng).unwrap();
        assert_eq!(connectivity_count(&full, 0, 5).unwrap(), 5);
        let singles = PartitionSchedule::sample(6, 1, 8, &mut rng).unwrap();
        assert_eq!(connectivity_count(&singles, 2, 4).unwrap(), 0);
        assert_eq!(connectivity_count(&full, 3, 0).unwrap(), 0);
        assert!(matches!(connectivity_count(&full, 5, 4), Err(Error::Usage(_))));

        let sched = PartitionSchedule::new(vec![
            BatchPartition::from_batches(4, 2, vec![vec![0, 1], vec![2, 3]]).unwrap(),
            BatchPartition::from_batches(4, 2, vec![vec![0, 2], vec![1, 3]]).unwrap(),
            BatchPartition::from_batches(4, 2, vec![vec![0, 3], vec![1, 2]]).unwrap(),
        ]);
        assert_eq!(connectivity_count(&sched, 0, 3).unwrap(), 1);
        assert_eq!(connectivity_count(&sched, 0, 2).unwrap(), 0);
        assert_eq!(connectivity_count(&sched, 0, 3).unwrap(), brute_connectivity(sched.partitions()));

        let random = PartitionSchedule::sample(7, 3, 40, &mut rng).unwrap();
        for start in 0..30 {
            for len in 1..10 {
                assert_eq!(
                    connectivity_count(&random, start, len).unwrap(),
                    brute_connectivity(&random.partitions()[start..start + len])
                );
            }
        }
    }

    #[test]
    fn schedule_text_round_trip() {
        let mut rng = RngStream::new(8, 4);
        let sched = PartitionSchedule::sample(7, 3, 5, &mut rng).unwrap();
        let text = sched.to_text();
        assert!(text.starts_with("0 "));
        assert_eq!(PartitionSchedule::from_text(&text, 7, 3).unwrap(), sched);
        assert!(PartitionSchedule::from_text("0 0,1|2\n", 4, 2).is_err());
    }

    #[test]
    fn p_m0_degenerate_cases() {
        assert_eq!(exact_p_m0(5, 5, 4, 1000).unwrap(), 4.0);
        assert_eq!(exact_p_m0(4, 1, 3, 1000).unwrap(), 0.0);
        let mc = estimate_p_m0(6, 6, 3, 50, 1, Execution::Sequential).unwrap();
        assert_eq!(mc.mean, 3.0);
        let mc = estimate_p_m0(6, 1, 3, 50, 1, Execution::Sequential).unwrap();
        assert_eq!(mc.mean, 0.0);
    }

    #[test]
    fn p_m0_exact_four_two_three() {
        // all three pair partitions must appear: 3!/3^3
        let exact = exact_p_m0(4, 2, 3, 1000).unwrap();
        assert!((exact - 2.0 / 9.0).abs() < 1e-15);
        let mc = estimate_p_m0(4, 2, 3, 100_000, 9, Execution::Parallel).unwrap();
        assert!((mc.mean - exact).abs() < 3.0 * mc.std_error, "{mc:?}");
    }

    #[test]
    fn p_m0_nondecreasing_in_window() {
        let mut last = 0.0;
        for m0 in 1..=5 {
            let v = exact_p_m0(4, 2, m0, 10_000).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn p_m0_exact_resource_cap() {
        assert!(matches!(exact_p_m0(8, 2, 4, 10_000), Err(Error::Resource(_))));
    }

    #[test]
    fn m0_examples() {
        assert_eq!(find_m0(9, 9).unwrap(), 1);
        assert_eq!(find_m0(4, 2).unwrap(), 3);
        assert!(matches!(find_m0(4, 1), Err(Error::NoConnectivity { .. })));
    }

    // Independent oracle: breadth-first closure over covered-pair sets.
    fn brute_m0(n: usize, p: usize) -> usize {
        let parts = enumerate_partitions(n, p, 10_000).unwrap();
        let masks: Vec<u64> = parts
            .iter()
            .map(|q| {
                let mut m = 0u64;
                for i in 0..n {
                    for j in i + 1..n {
                        if q.same_batch(i, j) {
                            m |= 1 << (i * n + j);
                        }
                    }
                }
                m
            })
            .collect();
        let full = masks.iter().fold(0, |a, b| a | b);
        let mut frontier: HashSet<u64> = HashSet::from([0]);
        for m in 1.. {
            frontier = frontier.iter().flat_map(|c| masks.iter().map(move |k| c | k)).collect();
            if frontier.contains(&full) {
                return m;
            }
        }
        unreachable!()
    }

    #[test]
    fn m0_matches_exhaustive_oracle() {
        for &(n, p) in &[(4, 2), (6, 3), (5, 2), (4, 3), (6, 2), (5, 3), (7, 3), (6, 4)] {
            assert_eq!(find_m0(n, p).unwrap(), brute_m0(n, p), "N={n} P={p}");
        }
        // frozen from the oracle
        assert_eq!(find_m0(6, 3).unwrap(), 4);
        assert_eq!(find_m0(5, 2).unwrap(), 5);
    }

    #[test]
    fn m0_bounds_bracket_exact_value() {
        for &(n, p) in &[(4, 2), (6, 3), (5, 2), (8, 2), (9, 3), (7, 4)] {
            let exact = find_m0(n, p).unwrap();
            assert!(m0_lower_bound(n, p).unwrap() <= exact);
            assert!(m0_greedy_upper_bound(n, p).unwrap() >= exact);
        }
        assert!(m0_greedy_upper_bound(100, 10).unwrap() >= 11);
    }
}
