//! Particle states, column/diameter views and reproducible random streams.
//!
//! Coordinates and particles are indexed from 0 throughout the API.

use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, usage, Result};

/// A random stream identified by `(base seed, stream id)`.
///
/// Streams are ChaCha8 keyed by the base seed with the stream id selecting an
/// independent keystream, so replicate `k` draws the same numbers no matter
/// which thread runs it or in which order.
#[derive(Clone, Debug)]
pub struct RngStream {
    base_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(stream_id);
        Self { base_seed, stream_id, rng }
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `N` particles in `R^d`, stored row-major by particle, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    particles: usize,
    dimension: usize,
    states: Vec<f64>,
    step: usize,
}

impl ParticleEnsemble {
    /// Builds an ensemble from explicit particle states.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let particles = rows.len();
        if particles == 0 {
            return Err(config("ensemble needs at least one particle"));
        }
        let dimension = rows[0].len();
        if dimension == 0 {
            return Err(config("ensemble dimension must be positive"));
        }
        if rows.iter().any(|r| r.len() != dimension) {
            return Err(config("all particles must have the same dimension"));
        }
        let states: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_flat(particles, dimension, states)
    }

    /// Builds an ensemble from a row-major `particles × dimension` buffer.
    pub fn from_flat(particles: usize, dimension: usize, states: Vec<f64>) -> Result<Self> {
        if particles == 0 || dimension == 0 {
            return Err(config("ensemble needs N >= 1 and d >= 1"));
        }
        if states.len() != particles * dimension {
            return Err(config(format!(
                "state buffer has {} entries, expected {}",
                states.len(),
                particles * dimension
            )));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(config("ensemble states must be finite"));
        }
        Ok(Self { particles, dimension, states, step: 0 })
    }

    pub(crate) fn from_parts_unchecked(particles: usize, dimension: usize, states: Vec<f64>, step: usize) -> Self {
        Self { particles, dimension, states, step }
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn set_step(&mut self, step: usize) {
        self.step = step;
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// State of particle `i`.
    pub fn particle(&self, i: usize) -> &[f64] {
        &self.states[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dimension)
    }

    /// Coordinate `l` of every particle.
    pub fn column(&self, l: usize) -> Result<Vec<f64>> {
        if l >= self.dimension {
            return Err(usage(format!("coordinate {l} out of range for dimension {}", self.dimension)));
        }
        Ok(self.rows().map(|row| row[l]).collect())
    }

    /// Diameter of every coordinate column.
    pub fn column_diameters(&self) -> Vec<f64> {
        let mut lo = self.particle(0).to_vec();
        let mut hi = lo.clone();
        for row in self.rows().skip(1) {
            for (l, &v) in row.iter().enumerate() {
                lo[l] = lo[l].min(v);
                hi[l] = hi[l].max(v);
            }
        }
        hi.iter().zip(&lo).map(|(h, l)| h - l).collect()
    }

    /// `max_{i,j} ‖x^i − x^j‖_∞`, computed as the largest column diameter.
    pub fn max_pairwise_inf_distance(&self) -> f64 {
        self.column_diameters().into_iter().fold(0.0, f64::max)
    }

    /// Writes the ensemble as CSV: a `# step=<n>` line, a header, one row per particle.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# step={}", self.step);
        let header: Vec<String> = (1..=self.dimension).map(|l| format!("x{l}")).collect();
        let _ = writeln!(out, "{}", header.join(","));
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Parses the format written by [`ParticleEnsemble::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut step = 0;
        let mut rows = Vec::new();
        let mut saw_header = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("step=") {
                    step = v.trim().parse().map_err(|_| config(format!("line {}: bad step index", lineno + 1)))?;
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| config(format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        let mut ens = Self::from_rows(&rows)?;
        ens.step = step;
        Ok(ens)
    }
}

/// Formats a double with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `max v − min v`.
pub fn diameter(v: &[f64]) -> Result<f64> {
    let (first, rest) = v.split_first().ok_or_else(|| usage("diameter of an empty vector"))?;
    let (lo, hi) = rest.iter().fold((*first, *first), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    Ok(hi - lo)
}

/// Axis-aligned sampling box.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(config("box bounds must be non-empty and of equal length"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(config(format!("invalid box interval [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lower, upper]^d`.
    pub fn cube(dimension: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dimension], vec![upper; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| l <= v && v <= u)
    }
}

/// Draws `particles` points i.i.d. uniform on the box.
pub fn sample_initial<R: Rng + ?Sized>(particles: usize, bounds: &SamplingBox, rng: &mut R) -> Result<ParticleEnsemble> {
    if particles == 0 {
        return Err(config("ensemble needs at least one particle"));
    }
    let d = bounds.dimension();
    let mut states = Vec::with_capacity(particles * d);
    for _ in 0..particles {
        for (l, u) in bounds.lower.iter().zip(&bounds.upper) {
            states.push(rng.random_range(*l..*u));
        }
    }
    Ok(ParticleEnsemble::from_parts_unchecked(particles, d, states, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn column_views() {
        let e = ParticleEnsemble::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(e.column(1).unwrap(), vec![2.0, 4.0]);
        assert!(matches!(e.column(2), Err(crate::Error::Usage(_))));
        let single = ParticleEnsemble::from_rows(&[vec![5.0, 6.0, 7.0]]).unwrap();
        assert_eq!(single.column(2).unwrap(), vec![7.0]);
    }

    #[test]
    fn columns_reassemble_states() {
        let rows = vec![vec![1.0, -2.0, 3.0], vec![0.5, 0.25, -8.0], vec![9.0, 9.5, 1.0]];
        let e = ParticleEnsemble::from_rows(&rows).unwrap();
        let cols: Vec<Vec<f64>> = (0..3).map(|l| e.column(l).unwrap()).collect();
        for (i, row) in rows.iter().enumerate() {
            for (l, v) in row.iter().enumerate() {
                assert_eq!(cols[l][i], *v);
            }
        }
    }

    #[test]
    fn diameter_values() {
        assert_eq!(diameter(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(diameter(&[1.0, 4.0, 2.0]).unwrap(), 3.0);
        assert!(matches!(diameter(&[]), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn pairwise_distance_examples() {
        let one = ParticleEnsemble::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(one.max_pairwise_inf_distance(), 0.0);
        let same = ParticleEnsemble::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(same.max_pairwise_inf_distance(), 0.0);
        let two = ParticleEnsemble::from_rows(&[vec![0.0, 0.0], vec![3.0, -4.0]]).unwrap();
        assert_eq!(two.max_pairwise_inf_distance(), 4.0);
    }

    #[test]
    fn uniform_sampling_support_mean_and_determinism() {
        let b = SamplingBox::cube(1, -3.0, 3.0).unwrap();
        let mut rng = RngStream::new(11, 0);
        let e = sample_initial(100_000, &b, &mut rng).unwrap();
        assert!(e.rows().all(|r| b.contains(r)));
        let mean = e.states().iter().sum::<f64>() / 1e5;
        // 3σ/√n with σ = √3
        assert!(mean.abs() < 3.0 * 3f64.sqrt() / 1e5f64.sqrt(), "mean {mean}");

        let b4 = SamplingBox::cube(4, -3.0, 3.0).unwrap();
        let a = sample_initial(50, &b4, &mut RngStream::new(3, 2)).unwrap();
        let c = sample_initial(50, &b4, &mut RngStream::new(3, 2)).unwrap();
        let other = sample_initial(50, &b4, &mut RngStream::new(3, 3)).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(SamplingBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(SamplingBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut e = ParticleEnsemble::from_rows(&[vec![0.1, -1.0 / 3.0], vec![1e-300, 7.0]]).unwrap();
        e.set_step(42);
        let back = ParticleEnsemble::from_csv(&e.to_csv()).unwrap();
        assert_eq!(back, e);
    }

    proptest! {
        #[test]
        fn diameter_shift_invariant_and_nonnegative(
            v in prop::collection::vec(-100.0f64..100.0, 1..20),
            c in -10.0f64..10.0,
        ) {
            let d = diameter(&v).unwrap();
            prop_assert!(d >= 0.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            prop_assert!((diameter(&shifted).unwrap() - d).abs() < 1e-9);
            let constant = v.iter().all(|x| *x == v[0]);
            prop_assert_eq!(d == 0.0, constant);
        }

        #[test]
        fn pairwise_distance_matches_double_loop(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..10),
        ) {
            let e = ParticleEnsemble::from_rows(&rows).unwrap();
            let mut brute: f64 = 0.0;
            for a in &rows {
                for b in &rows {
                    let dist = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                    brute = brute.max(dist);
                }
            }
            prop_assert_eq!(e.max_pairwise_inf_distance(), brute);
        }
    }
}
