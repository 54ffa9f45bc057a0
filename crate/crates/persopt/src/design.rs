//! Space-filling machinery: the Sobol' low-discrepancy sequence and the
//! maximin distance criterion.
//!
//! The Sobol' generator uses Joe–Kuo direction numbers and Gray-code
//! ordering, and skips the all-zeros first point so designs never start at a
//! box corner.

use crate::domain::Bounds;
use crate::error::{Error, Result};
use crate::opt;

/// Joe–Kuo primitive-polynomial coefficients `a` and initial direction
/// numbers `m` for dimensions 2..=32 (the new-joe-kuo-6 tabulation).
/// Dimension 1 is the van der Corput radical inverse (all m = 1).
const JOE_KUO: [(u32, &[u32]); 31] = [
    (0, &[1]),                          // dim 2
    (1, &[1, 3]),                       // dim 3
    (1, &[1, 3, 1]),                    // dim 4
    (2, &[1, 1, 1]),                    // dim 5
    (1, &[1, 1, 3, 3]),                 // dim 6
    (4, &[1, 3, 5, 13]),                // dim 7
    (2, &[1, 1, 5, 5, 17]),             // dim 8
    (4, &[1, 1, 5, 5, 5]),              // dim 9
    (7, &[1, 1, 7, 11, 19]),            // dim 10
    (11, &[1, 1, 5, 1, 1]),             // dim 11
    (13, &[1, 1, 1, 3, 11]),            // dim 12
    (14, &[1, 3, 5, 5, 31]),            // dim 13
    (1, &[1, 3, 3, 9, 7, 49]),          // dim 14
    (13, &[1, 1, 1, 15, 21, 21]),       // dim 15
    (16, &[1, 3, 1, 13, 27, 49]),       // dim 16
    (19, &[1, 1, 1, 15, 7, 5]),         // dim 17
    (22, &[1, 3, 1, 15, 13, 25]),       // dim 18
    (25, &[1, 1, 5, 5, 19, 61]),        // dim 19
    (1, &[1, 3, 7, 11, 23, 15, 103]),   // dim 20
    (4, &[1, 3, 7, 13, 13, 15, 69]),    // dim 21
    (7, &[1, 1, 3, 13, 7, 35, 63]),     // dim 22
    (8, &[1, 3, 5, 9, 1, 25, 53]),      // dim 23
    (14, &[1, 3, 1, 13, 9, 35, 107]),   // dim 24
    (19, &[1, 3, 1, 5, 27, 61, 31]),    // dim 25
    (21, &[1, 1, 5, 11, 19, 41, 61]),   // dim 26
    (28, &[1, 3, 5, 3, 3, 13, 69]),     // dim 27
    (31, &[1, 1, 7, 13, 1, 19, 1]),     // dim 28
    (32, &[1, 3, 7, 5, 13, 19, 59]),    // dim 29
    (37, &[1, 1, 3, 9, 25, 29, 41]),    // dim 30
    (41, &[1, 3, 5, 13, 23, 1, 55]),    // dim 31
    (42, &[1, 3, 7, 3, 13, 59, 17]),    // dim 32
];

/// Largest supported Sobol' dimension.
pub const MAX_SOBOL_DIM: usize = JOE_KUO.len() + 1;

const INDEX_BITS: usize = 32;

fn direction_table(dim: usize) -> Vec<[u32; INDEX_BITS]> {
    (0..dim)
        .map(|j| {
            let (a, m) = if j == 0 {
                (0u32, &[1u32; INDEX_BITS][..])
            } else {
                let (a, m) = JOE_KUO[j - 1];
                (a, m)
            };
            let s = m.len();
            let mut v = [0u32; INDEX_BITS];
            for (k, &mk) in m.iter().enumerate() {
                v[k] = mk << (31 - k);
            }
            for k in s..INDEX_BITS {
                let prev = v[k - s];
                v[k] = prev ^ (prev >> s);
                for bit in 0..s.saturating_sub(1) {
                    if a >> bit & 1 == 1 {
                        v[k] ^= v[k - s + 1 + bit];
                    }
                }
            }
            v
        })
        .collect()
}

/// A deterministic Sobol' point stream over `[0,1)^dim`.
///
/// Two streams with the same dimension emit bit-identical sequences. Clone a
/// stream to fork it for parallel consumers.
#[derive(Debug, Clone)]
pub struct SobolStream {
    dim: usize,
    v: Vec<[u32; INDEX_BITS]>,
    state: Vec<u32>,
    index: u32,
    emitted: u64,
}

impl SobolStream {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(Error::InvalidArgument(format!(
                "Sobol dimension must be in 1..={MAX_SOBOL_DIM}, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            v: direction_table(dim),
            state: vec![0; dim],
            index: u32::MAX,
            emitted: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Count of points emitted so far.
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// The next point of the sequence (the all-zeros point is skipped).
    pub fn next_point(&mut self) -> Vec<f64> {
        self.index = self.index.wrapping_add(1);
        let bit = self.index.trailing_ones() as usize;
        assert!(bit < INDEX_BITS, "Sobol stream exhausted");
        for (j, x) in self.state.iter_mut().enumerate() {
            *x ^= self.v[j][bit];
        }
        self.emitted += 1;
        self.state
            .iter()
            .map(|&x| x as f64 * (1.0 / 4294967296.0))
            .collect()
    }

    /// The next point scaled into `bounds`.
    pub fn next_in(&mut self, bounds: &Bounds) -> Vec<f64> {
        let u = self.next_point();
        bounds.from_unit(&u)
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }

    pub fn take_in(&mut self, n: usize, bounds: &Bounds) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_in(bounds)).collect()
    }
}

impl Iterator for SobolStream {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.next_point())
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from `x` to its nearest member of `points`.
pub fn min_distance(x: &[f64], points: &[Vec<f64>]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "min_distance needs a nonempty point set".into(),
        ));
    }
    Ok(points
        .iter()
        .map(|a| euclidean(x, a))
        .fold(f64::INFINITY, f64::min))
}

/// Candidates per box dimension used by [`maximin_next`].
pub const MAXIMIN_CANDIDATES_PER_DIM: usize = 256;

/// Approximately maximizes the distance-to-nearest criterion over the box.
///
/// Scores a fixed Sobol' candidate set plus the box corners, then polishes
/// the best candidate with a bounded simplex search. The winner never scores
/// below any raw candidate.
pub fn maximin_next(points: &[Vec<f64>], bounds: &Bounds) -> Result<Vec<f64>> {
    Ok(maximin_ranked(points, bounds)?.remove(0).0)
}

/// Like [`maximin_next`] but returns every scored candidate, best first, with
/// the polished winner at index 0. Used for duplicate-collision fallbacks.
pub fn maximin_ranked(points: &[Vec<f64>], bounds: &Bounds) -> Result<Vec<(Vec<f64>, f64)>> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "maximin_next needs a nonempty point set".into(),
        ));
    }
    let q = bounds.dim();
    let mut stream = SobolStream::new(q)?;
    let mut candidates = stream.take_in(MAXIMIN_CANDIDATES_PER_DIM * q, bounds);
    if q <= 12 {
        candidates.extend(bounds.corners());
    }

    let mut scored: Vec<(Vec<f64>, f64)> = candidates
        .into_iter()
        .map(|c| {
            let m = min_distance(&c, points).expect("points nonempty");
            (c, m)
        })
        .collect();
    // Stable sort keeps candidate order as the tie-break.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    let best_raw = scored[0].1;
    let max_width = (0..q).map(|i| bounds.width(i)).fold(0.0_f64, f64::max);
    let objective = |x: &[f64]| -min_distance(x, points).expect("points nonempty");
    // The criterion has many local maxima; polish a few leaders, keep the best.
    let mut winner: Option<(Vec<f64>, f64)> = None;
    for (start, _) in scored.iter().take(8) {
        let (polished, neg_val) =
            opt::nelder_mead(&objective, start, bounds, 200, 1e-8 * max_width, 0.0);
        let val = -neg_val;
        if winner.as_ref().is_none_or(|(_, w)| val > *w) {
            winner = Some((polished, val));
        }
    }
    if let Some((polished, val)) = winner
        && val > best_raw {
            scored.insert(0, (polished, val));
        }
    Ok(scored)
}
