//! Lattice-point counting for the reachable-reconstruction bound.
//!
//! After one step of the linear error dynamics `e_{k+1} = T e_k`, the set of
//! reconstruction points the zoom-in codec can produce lies on the image under
//! `T` of an integer lattice, restricted to an axis-aligned box `B` centered at
//! the origin with side lengths
//!
//! ```text
//! side_i = 4 rho |T_ii| + 2 max_j (sum_l |T_jl|)
//! ```
//!
//! The number of lattice points `I` in `Z^d` with `T I` inside `B` (call it
//! `beta`) enters the convergence-rate bounds through `ln beta`. This module
//! provides an exact enumeration (with a candidate budget, since the candidate
//! count grows exponentially with dimension) and a cheap product upper bound
//! that is always available:
//!
//! ```text
//! beta <= prod_i (floor(l*_i) + 1),   l*_i = sum_j |T^-1|_ij side_j
//! ```
//!
//! because `T I` in `B` forces `|I_i| <= l*_i / 2`. Counts are exact integers;
//! the box is closed with a relative tolerance of 1e-12 on each side so that
//! boundary points are included deterministically.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default cap on enumeration candidates before falling back to the product
/// upper bound.
pub const DEFAULT_ENUM_BUDGET: u64 = 100_000_000;

/// Relative boundary tolerance: side lengths are inflated by this factor to
/// make the box closed under floating-point comparison.
const REL_TOL: f64 = 1e-12;

/// The counting box: axis-aligned, origin-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxB {
    side_lengths: Vec<f64>,
    rho: f64,
}

impl BoxB {
    pub fn side_lengths(&self) -> &[f64] {
        &self.side_lengths
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Result of a lattice count: the exact count when enumeration fit in budget,
/// and the product upper bound which is always available.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeCountResult {
    /// Exact number of lattice points mapped into the box, when enumerated.
    pub exact: Option<u64>,
    /// Product upper bound on the count.
    pub upper: u128,
    /// Candidate tuples visited by the enumeration, when it ran.
    pub enumerated_points: Option<u64>,
}

impl LatticeCountResult {
    /// The tightest available count: exact when enumerated, else the upper bound.
    pub fn best(&self) -> u128 {
        self.exact.map(u128::from).unwrap_or(self.upper)
    }
}

/// Builds the counting box for quantizer inflation factor `rho >= 1`.
pub fn build_box(t: &DMatrix<f64>, rho: f64) -> Result<BoxB> {
    if t.nrows() != t.ncols() || t.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "lattice matrix must be square and nonempty, got {}x{}",
            t.nrows(),
            t.ncols()
        )));
    }
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("lattice matrix entries"));
    }
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::Param(format!("inflation factor rho must be >= 1, got {rho}")));
    }
    let d = t.nrows();
    let max_row_sum = (0..d)
        .map(|j| (0..d).map(|l| t[(j, l)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if max_row_sum == 0.0 {
        return Err(Error::Param("lattice matrix is identically zero".into()));
    }
    let side_lengths = (0..d)
        .map(|i| 4.0 * rho * t[(i, i)].abs() + 2.0 * max_row_sum)
        .collect();
    Ok(BoxB { side_lengths, rho })
}

/// Per-axis candidate half-ranges `l*_i / 2` (inflated by the closed-box
/// tolerance), derived from `|T^-1|`.
fn half_ranges(t: &DMatrix<f64>, b: &BoxB) -> Result<Vec<f64>> {
    let d = t.nrows();
    let inv = t.clone().try_inverse().ok_or(Error::SingularT)?;
    Ok((0..d)
        .map(|i| {
            (0..d)
                .map(|j| inv[(i, j)].abs() * (b.side_lengths[j] * 0.5 * (1.0 + REL_TOL)))
                .sum()
        })
        .collect())
}

/// Product upper bound `prod_i (floor(l*_i) + 1)`.
pub fn count_upper(t: &DMatrix<f64>, b: &BoxB) -> Result<u128> {
    let halves = half_ranges(t, b)?;
    halves
        .iter()
        .map(|&h| {
            let l_star = 2.0 * h;
            if l_star >= u64::MAX as f64 {
                return Err(Error::Numeric("lattice upper-bound factor"));
            }
            Ok(l_star.floor() as u128 + 1)
        })
        .try_fold(1u128, |acc, f| {
            acc.checked_mul(f?)
                .ok_or(Error::Numeric("lattice upper-bound overflow"))
        })
}

/// Counts lattice points `I` with `T I` in the box, enumerating up to `budget`
/// candidate tuples. When the candidate set exceeds the budget, `exact` is
/// `None` and only the upper bound is reported.
pub fn count_points(t: &DMatrix<f64>, b: &BoxB, budget: u64) -> Result<LatticeCountResult> {
    let d = t.nrows();
    if b.side_lengths.len() != d {
        return Err(Error::Dimension(format!(
            "box dimension {} does not match matrix dimension {d}",
            b.side_lengths.len()
        )));
    }
    let upper = count_upper(t, b)?;
    let halves_f = half_ranges(t, b)?;

    // Integer candidate half-ranges and total candidate count.
    let mut candidates: u128 = 1;
    let mut half = Vec::with_capacity(d);
    for &h in &halves_f {
        if !(h >= 0.0) || h >= (1u64 << 62) as f64 {
            return Ok(LatticeCountResult {
                exact: None,
                upper,
                enumerated_points: None,
            });
        }
        let hi = h.floor() as u64;
        half.push(hi as i64);
        candidates = match candidates.checked_mul(2 * hi as u128 + 1) {
            Some(c) => c,
            None => u128::MAX,
        };
    }
    if candidates > budget as u128 {
        return Ok(LatticeCountResult {
            exact: None,
            upper,
            enumerated_points: None,
        });
    }

    // Closed-box acceptance limits.
    let limits: Vec<f64> = b
        .side_lengths
        .iter()
        .map(|s| s * 0.5 * (1.0 + REL_TOL))
        .collect();

    // Enumerate, parallelizing over the leading axis. Each task owns a scratch
    // buffer holding one partial image `T I` per recursion level, so the image
    // at each level is a fresh multiply-add from its parent (no drift from
    // repeated in-place increments).
    let exact: u64 = (-half[0]..=half[0])
        .collect::<Vec<i64>>()
        .par_iter()
        .map(|&i0| {
            let mut levels = vec![0.0f64; (d + 1) * d];
            for j in 0..d {
                levels[d + j] = i0 as f64 * t[(j, 0)];
            }
            let mut count = 0u64;
            enumerate_axis(t, &half, &limits, 1, &mut levels, &mut count);
            count
        })
        .sum();

    Ok(LatticeCountResult {
        exact: Some(exact),
        upper,
        enumerated_points: Some(candidates as u64),
    })
}

/// Builds the box and counts in one call.
pub fn count_lattice(t: &DMatrix<f64>, rho: f64, budget: u64) -> Result<LatticeCountResult> {
    let b = build_box(t, rho)?;
    count_points(t, &b, budget)
}

/// Depth-first digit enumeration. `levels` is a flat `(d + 1) x d` scratch:
/// row `axis` holds the partial image of the digits fixed so far, and each
/// child row is a fresh multiply-add from its parent.
fn enumerate_axis(
    t: &DMatrix<f64>,
    half: &[i64],
    limits: &[f64],
    axis: usize,
    levels: &mut [f64],
    count: &mut u64,
) {
    let d = half.len();
    if axis == d {
        let image = &levels[axis * d..(axis + 1) * d];
        if image.iter().zip(limits).all(|(y, lim)| y.abs() <= *lim) {
            *count += 1;
        }
        return;
    }
    for i in -half[axis]..=half[axis] {
        let fi = i as f64;
        for j in 0..d {
            let parent = levels[axis * d + j];
            levels[(axis + 1) * d + j] = parent + fi * t[(j, axis)];
        }
        enumerate_axis(t, half, limits, axis + 1, levels, count);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frozen_t() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.9, -0.1, 0.1, 1.0])
    }

    /// Independent oracle: full matvec per candidate over a wide window.
    fn brute_force(t: &DMatrix<f64>, b: &BoxB, window: i64) -> u64 {
        let d = t.nrows();
        let limits: Vec<f64> = b.side_lengths().iter().map(|s| s * 0.5 * (1.0 + 1e-12)).collect();
        let mut count = 0u64;
        let mut idx = vec![-window; d];
        'outer: loop {
            let y = t * DMatrix::from_fn(d, 1, |r, _| idx[r] as f64);
            if (0..d).all(|j| y[(j, 0)].abs() <= limits[j]) {
                count += 1;
            }
            let mut axis = 0;
            loop {
                idx[axis] += 1;
                if idx[axis] <= window {
                    break;
                }
                idx[axis] = -window;
                axis += 1;
                if axis == d {
                    break 'outer;
                }
            }
        }
        count
    }

    #[test]
    fn box_sides_match_hand_computation() {
        let b = build_box(&frozen_t(), 1.0).unwrap();
        assert!((b.side_lengths()[0] - 5.8).abs() <= 1e-12);
        assert!((b.side_lengths()[1] - 6.2).abs() <= 1e-12);
        assert_eq!(b.rho(), 1.0);
    }

    #[test]
    fn frozen_counts() {
        let t = frozen_t();
        let b = build_box(&t, 1.0).unwrap();
        assert_eq!(count_upper(&t, &b).unwrap(), 56);
        let r = count_points(&t, &b, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(r.exact, Some(43));
        assert_eq!(r.upper, 56);
        assert_eq!(r.best(), 43);
    }

    #[test]
    fn identity_counts() {
        let t = DMatrix::<f64>::identity(2, 2);
        let b = build_box(&t, 1.0).unwrap();
        // side = 4 + 2 = 6 per axis; |I_i| <= 3 -> 7 points per axis.
        assert_eq!(b.side_lengths(), &[6.0, 6.0]);
        let r = count_points(&t, &b, DEFAULT_ENUM_BUDGET).unwrap();
        assert_eq!(r.exact, Some(49));
        assert_eq!(r.upper, 49);
        assert_eq!(r.enumerated_points, Some(49));
    }

    #[test]
    fn scaled_identity_closed_form() {
        // T = c I: side = 6c, |c I_i| <= 3c -> 7 points per axis, any dimension.
        for (c, d) in [(0.7, 3usize), (1.3, 2), (0.25, 4)] {
            let t = DMatrix::<f64>::identity(d, d) * c;
            let r = count_lattice(&t, 1.0, DEFAULT_ENUM_BUDGET).unwrap();
            assert_eq!(r.exact, Some(7u64.pow(d as u32)), "c={c} d={d}");
        }
    }

    #[test]
    fn budget_exhaustion_degrades_to_upper_bound() {
        let t = frozen_t();
        let b = build_box(&t, 1.0).unwrap();
        let r = count_points(&t, &b, 10).unwrap();
        assert_eq!(r.exact, None);
        assert_eq!(r.upper, 56);
        assert_eq!(r.enumerated_points, None);
        assert_eq!(r.best(), 56);
    }

    #[test]
    fn random_2d_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t: DMatrix<f64> = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.2..1.2));
            if t.clone().try_inverse().is_none() || t.determinant().abs() < 0.05 {
                continue;
            }
            let b = build_box(&t, 1.0).unwrap();
            let r = count_points(&t, &b, DEFAULT_ENUM_BUDGET).unwrap();
            let exact = r.exact.expect("2d enumeration fits budget");
            let h = half_ranges(&t, &b).unwrap();
            let window = (2.0 * h[0].max(h[1])) as i64 + 2;
            assert_eq!(exact, brute_force(&t, &b, window));
            assert!(u128::from(exact) <= r.upper);
            assert!(exact >= 1, "origin always maps into the box");
        }
    }

    #[test]
    fn random_3d_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut done = 0;
        while done < 20 {
            let t: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            if t.determinant().abs() < 0.1 {
                continue;
            }
            done += 1;
            let b = build_box(&t, 1.0).unwrap();
            let r = count_points(&t, &b, DEFAULT_ENUM_BUDGET).unwrap();
            let exact = r.exact.expect("3d enumeration fits budget");
            let hmax = half_ranges(&t, &b)
                .unwrap()
                .iter()
                .fold(0.0f64, |a, &h| a.max(h));
            let window = (2.0 * hmax) as i64 + 2;
            assert_eq!(exact, brute_force(&t, &b, window));
            assert!(u128::from(exact) <= r.upper);
        }
    }

    #[test]
    fn inflation_factor_grows_the_count() {
        let t = frozen_t();
        let r1 = count_lattice(&t, 1.0, DEFAULT_ENUM_BUDGET).unwrap();
        let r2 = count_lattice(&t, 2.0, DEFAULT_ENUM_BUDGET).unwrap();
        assert!(r2.exact.unwrap() > r1.exact.unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = frozen_t();
        assert!(matches!(build_box(&t, 0.5), Err(Error::Param(_))));
        assert!(matches!(
            build_box(&DMatrix::<f64>::zeros(2, 3), 1.0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            build_box(&DMatrix::<f64>::zeros(2, 2), 1.0),
            Err(Error::Param(_))
        ));
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = build_box(&singular, 1.0).unwrap();
        assert!(matches!(
            count_points(&singular, &b, DEFAULT_ENUM_BUDGET),
            Err(Error::SingularT)
        ));
    }
}
