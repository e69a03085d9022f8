//! Box state spaces, the componentwise partial order, and the natural
//! projection.
//!
//! Everything downstream leans on two exact facts about boxes:
//! clamping coordinatewise *is* the minimum-Euclidean-distance projection
//! onto the box, and that projection preserves the componentwise order.
//! Both hold exactly in floating point (`min`/`max` never round), which is
//! what lets the sandwich machinery demand zero-tolerance inequalities.

use crate::error::{Result, SmeError};

/// A hypercube `[lower_1, upper_1] x ... x [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    /// Builds a box, rejecting non-finite bounds and empty intervals.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SmeError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(SmeError::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        for (i, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !a.is_finite() {
                return Err(SmeError::NonFinite { index: i, value: a });
            }
            if !b.is_finite() {
                return Err(SmeError::NonFinite { index: i, value: b });
            }
            if !(a < b) {
                return Err(SmeError::InvalidBox {
                    index: i,
                    lower: a,
                    upper: b,
                });
            }
        }
        Ok(StateBox { lower, upper })
    }

    /// Scalar interval `[lo, hi]`.
    pub fn scalar(lo: f64, hi: f64) -> Result<Self> {
        StateBox::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// The corner with every coordinate at its lower bound.
    pub fn bottom_corner(&self) -> Point {
        Point::new_unchecked(self.lower.clone())
    }

    /// The corner with every coordinate at its upper bound.
    pub fn top_corner(&self) -> Point {
        Point::new_unchecked(self.upper.clone())
    }

    /// Componentwise midpoint.
    pub fn midpoint(&self) -> Point {
        Point::new_unchecked(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect(),
        )
    }

    /// True iff every coordinate of `x` lies inside the bounds.
    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim()
            && x.coords()
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&a, &b))| a <= v && v <= b)
    }

    /// Validates membership with a structured error naming the coordinate.
    pub fn check_contains(&self, x: &Point, space: &'static str) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(SmeError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        for (i, &v) in x.coords().iter().enumerate() {
            if v < self.lower[i] || v > self.upper[i] {
                return Err(SmeError::OutOfBounds {
                    space,
                    index: i,
                    value: v,
                    lower: self.lower[i],
                    upper: self.upper[i],
                });
            }
        }
        Ok(())
    }

    /// The natural projection onto the box: componentwise clamp.
    ///
    /// For a box this equals the minimum-Euclidean-distance projection,
    /// it is idempotent, and it is order preserving: `x >= y` implies
    /// `project(x) >= project(y)` exactly.
    pub fn project(&self, x: &Point) -> Result<Point> {
        if x.dim() != self.dim() {
            return Err(SmeError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(Point::new_unchecked(self.project_coords(x.coords())))
    }

    /// Clamp on raw coordinates; used on hot simulation paths.
    pub(crate) fn project_coords(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| v.max(self.lower[i]).min(self.upper[i]))
            .collect()
    }

    /// Clamp in place, returning whether any coordinate moved.
    pub(crate) fn project_in_place(&self, x: &mut [f64]) -> bool {
        let mut clamped = false;
        for (i, v) in x.iter_mut().enumerate() {
            let c = v.max(self.lower[i]).min(self.upper[i]);
            if c != *v {
                clamped = true;
            }
            *v = c;
        }
        clamped
    }

    /// Equispaced lattice with `points_per_dim^k` nodes, corners included,
    /// in lexicographic order by coordinate index.
    ///
    /// The fixed ordering gives deterministic tie-breaking to every consumer
    /// (grid searches, distance maxima), so two runs can never disagree on
    /// which of two equal cells "wins".
    pub fn lattice_grid(&self, points_per_dim: usize) -> Result<Vec<Point>> {
        self.lattice_grid_capped(points_per_dim, DEFAULT_GRID_CAP)
    }

    /// As [`Self::lattice_grid`] with an explicit cap on the total count.
    pub fn lattice_grid_capped(&self, points_per_dim: usize, cap: usize) -> Result<Vec<Point>> {
        if points_per_dim < 2 {
            return Err(SmeError::EmptyWindow {
                what: "points_per_dim",
                got: points_per_dim as i64,
            });
        }
        let k = self.dim();
        let total = (points_per_dim as u128).pow(k as u32);
        if total > cap as u128 {
            return Err(SmeError::GridTooLarge {
                requested: total,
                cap,
            });
        }
        let axes: Vec<Vec<f64>> = (0..k)
            .map(|i| axis_points(self.lower[i], self.upper[i], points_per_dim))
            .collect();
        let mut out = Vec::with_capacity(total as usize);
        let mut idx = vec![0usize; k];
        loop {
            out.push(Point::new_unchecked(
                (0..k).map(|i| axes[i][idx[i]]).collect(),
            ));
            // lexicographic: last coordinate varies fastest
            let mut d = k;
            loop {
                if d == 0 {
                    return Ok(out);
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < points_per_dim {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

/// Hard ceiling on lattice sizes; studies that need more use Latin
/// hypercube sampling instead.
pub const DEFAULT_GRID_CAP: usize = 1 << 22;

fn axis_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|j| {
            if j == n - 1 {
                hi // endpoint exact, no accumulated rounding
            } else {
                lo + step * j as f64
            }
        })
        .collect()
}

/// A point of `R^k`, always finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    coords: Vec<f64>,
}

impl Point {
    /// Builds a point, rejecting NaN and infinities so that every
    /// downstream order comparison is exact and total on the data we hold.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for (i, &v) in coords.iter().enumerate() {
            if !v.is_finite() {
                return Err(SmeError::NonFinite { index: i, value: v });
            }
        }
        Ok(Point { coords })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Point::new(vec![v])
    }

    pub(crate) fn new_unchecked(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Componentwise `self <= other` in the Euclidean partial order.
    pub fn leq(&self, other: &Point) -> Result<bool> {
        if self.dim() != other.dim() {
            return Err(SmeError::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .coords
            .iter()
            .zip(&other.coords)
            .all(|(&a, &b)| a <= b))
    }

    /// `self + t * e` where `e` is the all-ones vector.
    pub fn shift_all(&self, t: f64) -> Point {
        Point::new_unchecked(self.coords.iter().map(|&v| v + t).collect())
    }

    pub fn euclid_dist(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Componentwise `x <= y` on raw slices (callers guarantee equal length).
pub fn leq_coords(x: &[f64], y: &[f64]) -> bool {
    x.iter().zip(y).all(|(&a, &b)| a <= b)
}

/// Max-norm distance between two coordinate slices.
pub(crate) fn max_norm_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square() -> StateBox {
        StateBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn project_clamps_one_coordinate() {
        let b = unit_square();
        let p = b.project(&Point::new(vec![1.5, 0.5]).unwrap()).unwrap();
        assert_eq!(p.coords(), &[1.0, 0.5]);
    }

    #[test]
    fn project_is_identity_on_interior() {
        let b = unit_square();
        let p = b.project(&Point::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert_eq!(p.coords(), &[0.3, 0.7]);
    }

    #[test]
    fn project_clamps_both_coordinates() {
        let b = unit_square();
        let p = b.project(&Point::new(vec![-0.3, 2.0]).unwrap()).unwrap();
        assert_eq!(p.coords(), &[0.0, 1.0]);
    }

    #[test]
    fn project_dimension_mismatch_is_structured() {
        let b = unit_square();
        let err = b.project(&Point::scalar(0.5).unwrap()).unwrap_err();
        match err {
            SmeError::DimensionMismatch { expected: 2, got: 1 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn leq_reflexive_and_incomparable() {
        let o = Point::new(vec![0.0, 0.0]).unwrap();
        assert!(o.leq(&o).unwrap());
        let a = Point::new(vec![0.0, 1.0]).unwrap();
        let b = Point::new(vec![1.0, 0.0]).unwrap();
        assert!(!a.leq(&b).unwrap());
        assert!(!b.leq(&a).unwrap());
        let c = Point::new(vec![0.2, 0.3]).unwrap();
        let d = Point::new(vec![0.2, 0.9]).unwrap();
        assert!(c.leq(&d).unwrap());
    }

    #[test]
    fn lattice_endpoints_scalar() {
        let b = StateBox::scalar(0.0, 1.0).unwrap();
        let g = b.lattice_grid(2).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].coords(), &[0.0]);
        assert_eq!(g[1].coords(), &[1.0]);
    }

    #[test]
    fn lattice_corners_lexicographic() {
        let b = unit_square();
        let g = b.lattice_grid(2).unwrap();
        let got: Vec<&[f64]> = g.iter().map(|p| p.coords()).collect();
        assert_eq!(
            got,
            vec![
                &[0.0, 0.0][..],
                &[0.0, 1.0][..],
                &[1.0, 0.0][..],
                &[1.0, 1.0][..]
            ]
        );
    }

    #[test]
    fn lattice_equispaced() {
        let b = StateBox::scalar(0.0, 2.0).unwrap();
        let g = b.lattice_grid(3).unwrap();
        let got: Vec<f64> = g.iter().map(|p| p.coords()[0]).collect();
        assert_eq!(got, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn lattice_cap_is_enforced() {
        let b = StateBox::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let err = b.lattice_grid_capped(100, 1000).unwrap_err();
        assert!(matches!(err, SmeError::GridTooLarge { .. }));
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(Point::new(vec![f64::NAN]).is_err());
        assert!(Point::new(vec![f64::INFINITY, 0.0]).is_err());
        assert!(StateBox::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(StateBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(StateBox::new(vec![2.0], vec![1.0]).is_err());
    }

    #[test]
    fn projection_monotone_ten_thousand_pairs() {
        let b = StateBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 5.0, 3.0]).unwrap();
        let mut s = crate::simulate::UniformSampler::new(77, 0);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..3).map(|_| 100.0 * s.next_f64() - 50.0).collect();
            let y: Vec<f64> = x.iter().map(|&v| v + 20.0 * s.next_f64()).collect();
            let px = b.project(&Point::new(x).unwrap()).unwrap();
            let py = b.project(&Point::new(y).unwrap()).unwrap();
            assert!(px.leq(&py).unwrap());
        }
    }

    #[test]
    fn projection_beats_thousand_random_box_points() {
        let b = StateBox::new(vec![-1.0, 0.5], vec![1.0, 4.0]).unwrap();
        let mut s = crate::simulate::UniformSampler::new(78, 0);
        for _ in 0..20 {
            let x = Point::new(vec![40.0 * s.next_f64() - 20.0, 40.0 * s.next_f64() - 20.0])
                .unwrap();
            let proj = b.project(&x).unwrap();
            let d_proj = x.euclid_dist(&proj);
            for _ in 0..1_000 {
                let q = Point::new(
                    (0..2)
                        .map(|i| b.lower()[i] + s.next_f64() * (b.upper()[i] - b.lower()[i]))
                        .collect(),
                )
                .unwrap();
                assert!(d_proj <= x.euclid_dist(&q) + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn projection_idempotent(x in prop::collection::vec(-50.0f64..50.0, 3)) {
            let b = StateBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 5.0, 3.0]).unwrap();
            let p = Point::new(x).unwrap();
            let once = b.project(&p).unwrap();
            let twice = b.project(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(b.contains(&once));
        }

        #[test]
        fn projection_monotone(
            x in prop::collection::vec(-50.0f64..50.0, 3),
            bump in prop::collection::vec(0.0f64..20.0, 3),
        ) {
            let b = StateBox::new(vec![-1.0, 0.0, 2.0], vec![1.0, 5.0, 3.0]).unwrap();
            let lo = Point::new(x.clone()).unwrap();
            let hi = Point::new(x.iter().zip(&bump).map(|(a, d)| a + d).collect()).unwrap();
            let plo = b.project(&lo).unwrap();
            let phi = b.project(&hi).unwrap();
            prop_assert!(plo.leq(&phi).unwrap());
        }

        #[test]
        fn projection_minimizes_distance(
            x in prop::collection::vec(-20.0f64..20.0, 2),
            probe in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let b = StateBox::new(vec![-1.0, 0.5], vec![1.0, 4.0]).unwrap();
            let p = Point::new(x).unwrap();
            let proj = b.project(&p).unwrap();
            let q = Point::new(
                probe
                    .iter()
                    .enumerate()
                    .map(|(i, t)| b.lower()[i] + t * (b.upper()[i] - b.lower()[i]))
                    .collect(),
            )
            .unwrap();
            prop_assert!(p.euclid_dist(&proj) <= p.euclid_dist(&q) + 1e-12);
        }
    }
}
