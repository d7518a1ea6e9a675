//! Simplex geometry: mixture weights, Dirichlet sampling, Euclidean
//! projection, probability distances, and lattice enumeration.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard tolerance on the coordinate sum of a valid mixture.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-9;
/// Constructors renormalize sums within this deviation and reject beyond it.
pub const SIMPLEX_RENORMALIZE_LIMIT: f64 = 1e-6;

/// A point on the probability simplex: nonnegative proportions over `n >= 2`
/// datasets summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureWeights {
    weights: Vec<f64>,
}

impl MixtureWeights {
    /// Validates and stores the weights. Sums within
    /// [`SIMPLEX_RENORMALIZE_LIMIT`] of one are renormalized; larger
    /// deviations are rejected so real bugs surface.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid(format!(
                "mixture needs at least 2 datasets, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("mixture contains non-finite weights"));
        }
        let mut weights = weights;
        for w in &mut weights {
            if *w < 0.0 {
                if *w > -1e-12 {
                    *w = 0.0; // absorb projection round-off
                } else {
                    return Err(Error::invalid(format!("negative mixture weight {w}")));
                }
            }
        }
        let sum: f64 = weights.iter().sum();
        let deviation = (sum - 1.0).abs();
        if deviation > SIMPLEX_RENORMALIZE_LIMIT {
            return Err(Error::invalid(format!(
                "mixture weights sum to {sum}, outside the renormalization limit"
            )));
        }
        if deviation > SIMPLEX_SUM_TOLERANCE {
            for w in &mut weights {
                *w /= sum;
            }
        }
        Ok(MixtureWeights { weights })
    }

    /// The uniform mixture `(1/n, ..., 1/n)`.
    pub fn uniform(n: usize) -> Result<Self> {
        MixtureWeights::new(vec![1.0 / n as f64; n])
    }

    /// The vertex mixture with all mass on coordinate `index`.
    pub fn vertex(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(Error::invalid(format!("vertex index {index} out of range for n={n}")));
        }
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        MixtureWeights::new(w)
    }

    /// Draws a mixture from the symmetric Dirichlet(alpha) distribution.
    /// `alpha = 1` is uniform over the simplex.
    pub fn sample_dirichlet<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("dirichlet dimension must be >= 2, got {n}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
        }
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| Error::invalid(format!("invalid gamma parameters: {e}")))?;
        // Normalized Gamma draws; retry the (measure-zero) all-underflow case.
        for _ in 0..64 {
            let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
            let sum: f64 = draws.iter().sum();
            if sum > 0.0 && sum.is_finite() {
                return MixtureWeights::new(draws.iter().map(|g| g / sum).collect());
            }
        }
        Err(Error::NumericFailure {
            message: "dirichlet sampling kept producing zero total mass".into(),
            attempted_jitter: vec![],
        })
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

impl std::fmt::Display for MixtureWeights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, w) in self.weights.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{w:.4}")?;
        }
        write!(f, "]")
    }
}

/// Distance used inside the mixture RBF kernel factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimplexDistanceKind {
    SquaredL2,
    TotalVariation,
    JensenShannon,
}

impl SimplexDistanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimplexDistanceKind::SquaredL2 => "squared-l2",
            SimplexDistanceKind::TotalVariation => "total-variation",
            SimplexDistanceKind::JensenShannon => "jensen-shannon",
        }
    }
}

impl std::str::FromStr for SimplexDistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-l2" => Ok(SimplexDistanceKind::SquaredL2),
            "total-variation" => Ok(SimplexDistanceKind::TotalVariation),
            "jensen-shannon" => Ok(SimplexDistanceKind::JensenShannon),
            other => Err(Error::invalid(format!("unknown distance kind: {other}"))),
        }
    }
}

/// Euclidean projection of an arbitrary real vector onto the simplex,
/// via the sort-based algorithm (O(n log n)). Idempotent on simplex points.
pub fn project_to_simplex(v: &[f64]) -> Result<MixtureWeights> {
    if v.len() < 2 {
        return Err(Error::invalid("projection needs dimension >= 2"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("projection input contains non-finite entries"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries compare"));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    let mut found = false;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
            found = true;
        }
    }
    debug_assert!(found, "projection threshold always exists");
    let _ = found;
    MixtureWeights::new(v.iter().map(|x| (x - threshold).max(0.0)).collect())
}

/// Distance between two simplex points under the chosen kind.
///
/// Total variation follows the plain L1 form (no 1/2 factor); the
/// Jensen-Shannon divergence uses natural logarithms, so its maximum over
/// the simplex is ln 2.
pub fn simplex_distance(
    a: &MixtureWeights,
    b: &MixtureWeights,
    kind: SimplexDistanceKind,
) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let (a, b) = (a.as_slice(), b.as_slice());
    let d = match kind {
        SimplexDistanceKind::SquaredL2 => {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
        }
        SimplexDistanceKind::TotalVariation => {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
        }
        SimplexDistanceKind::JensenShannon => {
            // 0 * ln(0/q) contributes 0; the midpoint is zero only where
            // both coordinates are, so no division by zero arises.
            let mut acc = 0.0;
            for (&p, &q) in a.iter().zip(b) {
                let mid = 0.5 * (p + q);
                if p > 0.0 {
                    acc += 0.5 * p * (p / mid).ln();
                }
                if q > 0.0 {
                    acc += 0.5 * q * (q / mid).ln();
                }
            }
            acc
        }
    };
    Ok(d.max(0.0))
}

/// Gradient of `simplex_distance(a, b, kind)` with respect to `a`.
///
/// The total-variation subgradient at ties is 0; the Jensen-Shannon
/// gradient clamps vanishing coordinates so boundary points stay finite.
pub(crate) fn simplex_distance_gradient(
    a: &MixtureWeights,
    b: &MixtureWeights,
    kind: SimplexDistanceKind,
) -> Vec<f64> {
    debug_assert_eq!(a.dimension(), b.dimension());
    let (a, b) = (a.as_slice(), b.as_slice());
    match kind {
        SimplexDistanceKind::SquaredL2 => a.iter().zip(b).map(|(x, y)| 2.0 * (x - y)).collect(),
        SimplexDistanceKind::TotalVariation => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                if x > y {
                    1.0
                } else if x < y {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect(),
        SimplexDistanceKind::JensenShannon => a
            .iter()
            .zip(b)
            .map(|(&p, &q)| {
                if p == 0.0 && q == 0.0 {
                    0.0
                } else {
                    let mid = (0.5 * (p + q)).max(1e-12);
                    0.5 * (p.max(1e-12) / mid).ln()
                }
            })
            .collect(),
    }
}

/// The lattice of simplex points whose coordinates are multiples of
/// `1/k`, enumerated in a fixed lexicographic order.
#[derive(Debug, Clone)]
pub struct SimplexLattice {
    dimension: usize,
    denominator: u64,
    len: usize,
}

/// At most this many lattice points are enumerable before the grid oracle
/// refuses to run.
pub const LATTICE_POINT_LIMIT: u128 = 10_000_000;

pub fn simplex_lattice(dimension: usize, resolution: f64) -> Result<SimplexLattice> {
    if dimension < 2 {
        return Err(Error::invalid("lattice needs dimension >= 2"));
    }
    if !(resolution > 0.0) || resolution > 1.0 {
        return Err(Error::invalid(format!("resolution must be in (0, 1], got {resolution}")));
    }
    let k = (1.0 / resolution).round();
    if ((k * resolution) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "resolution {resolution} does not evenly divide 1"
        )));
    }
    let k = k as u64;
    let count = compositions(k, dimension);
    if count > LATTICE_POINT_LIMIT {
        return Err(Error::ResourceLimit(format!(
            "lattice would have {count} points (> {LATTICE_POINT_LIMIT})"
        )));
    }
    Ok(SimplexLattice {
        dimension,
        denominator: k,
        len: count as usize,
    })
}

/// Number of ways to write `total` as an ordered sum of `parts` nonnegative
/// integers, i.e. C(total + parts - 1, parts - 1).
fn compositions(total: u64, parts: usize) -> u128 {
    let n = total as u128 + parts as u128 - 1;
    let k = (parts as u128 - 1).min(total as u128);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result.saturating_mul(n - i) / (i + 1);
        if result > LATTICE_POINT_LIMIT * 2 {
            return result; // saturated; callers only compare against the limit
        }
    }
    result
}

impl SimplexLattice {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn counts_at(&self, index: usize) -> Vec<u64> {
        let mut counts = vec![0u64; self.dimension];
        let mut remaining = self.denominator;
        let mut idx = index as u128;
        for slot in 0..self.dimension - 1 {
            let mut c = 0u64;
            loop {
                // points with counts[slot] = c occupy a block of size
                // compositions(remaining - c, dims left - 1)
                let block = compositions(remaining - c, self.dimension - slot - 1);
                if idx < block {
                    break;
                }
                idx -= block;
                c += 1;
            }
            counts[slot] = c;
            remaining -= c;
        }
        counts[self.dimension - 1] = remaining;
        counts
    }

    fn counts_to_point(&self, counts: &[u64]) -> Vec<f64> {
        counts
            .iter()
            .map(|&c| c as f64 / self.denominator as f64)
            .collect()
    }

    /// The `index`-th lattice point in enumeration order.
    pub fn point(&self, index: usize) -> Vec<f64> {
        self.counts_to_point(&self.counts_at(index))
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        self.iter_range(0..self.len)
    }

    /// Iterates the points with indices in `range`, decoding the first
    /// point and stepping incrementally from there.
    pub fn iter_range(&self, range: std::ops::Range<usize>) -> impl Iterator<Item = Vec<f64>> + '_ {
        let end = range.end.min(self.len);
        LatticeIter {
            lattice: self,
            counts: None,
            start: range.start,
            remaining: end.saturating_sub(range.start),
        }
    }
}

/// Lexicographic successor on the count vector; false once exhausted.
fn advance_counts(counts: &mut [u64]) -> bool {
    let n = counts.len();
    let pivot = match (0..n - 1)
        .rev()
        .find(|&s| counts[s + 1..].iter().sum::<u64>() > 0)
    {
        Some(p) => p,
        None => return false,
    };
    let pool: u64 = counts[pivot + 1..].iter().sum();
    counts[pivot] += 1;
    for c in &mut counts[pivot + 1..] {
        *c = 0;
    }
    counts[n - 1] = pool - 1;
    true
}

struct LatticeIter<'a> {
    lattice: &'a SimplexLattice,
    counts: Option<Vec<u64>>,
    start: usize,
    remaining: usize,
}

impl Iterator for LatticeIter<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        if self.remaining == 0 {
            return None;
        }
        match &mut self.counts {
            None => {
                self.counts = Some(self.lattice.counts_at(self.start));
            }
            Some(counts) => {
                if !advance_counts(counts) {
                    return None;
                }
            }
        }
        self.remaining -= 1;
        self.counts
            .as_ref()
            .map(|c| self.lattice.counts_to_point(c))
    }
}
