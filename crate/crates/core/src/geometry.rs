//! Vector primitives: uniform ball sampling, cover counting, coordinate-wise
//! median and the randomized Hadamard rotation `(1/√d)·H·D`.
//!
//! Distances are compared through squared norms. Hot paths work on flat
//! `&[f64]` slices; [`Point`] is the validated public wrapper.

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};

/// A finite vector in `ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(DpError::NonFinite("point coordinates"));
        }
        Ok(Point(coords))
    }

    pub fn zeros(d: usize) -> Self {
        Point(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Caller guarantees finiteness.
    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Point(coords)
    }
}

impl Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = DpError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Self {
        p.0
    }
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Points stored row-major in one buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl PointSet {
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points.first().ok_or(DpError::EmptyInput("points"))?;
        let d = first.dim();
        if d == 0 {
            return Err(DpError::invalid("points must have dimension at least 1"));
        }
        let mut data = Vec::with_capacity(points.len() * d);
        for p in points {
            if p.dim() != d {
                return Err(DpError::DimensionMismatch { expected: d, got: p.dim() });
            }
            data.extend_from_slice(p);
        }
        Ok(PointSet { data, n: points.len(), d })
    }

    pub fn from_flat(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(DpError::invalid("dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(DpError::EmptyInput("points"));
        }
        if data.len() % d != 0 {
            return Err(DpError::DimensionMismatch { expected: d, got: data.len() % d });
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(DpError::NonFinite("points"));
        }
        Ok(PointSet { n: data.len() / d, data, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Number of rows within squared distance `r_sq` of `p` (closed ball).
    pub fn count_within_sq(&self, p: &[f64], r_sq: f64) -> usize {
        self.rows().filter(|x| dist_sq(p, x) <= r_sq).count()
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.rows().map(|r| Point::from_raw(r.to_vec())).collect()
    }
}

/// Writes a uniform draw from the closed ball `B(center, radius)` into `out`.
///
/// Direction is a normalized Gaussian and the norm is `radius·u^{1/d}`. The
/// result is checked with the same arithmetic that [`count_cover`] uses, and
/// pulled inward in the rare case that rounding put it outside.
pub(crate) fn sample_ball_into<R: Rng + ?Sized>(
    center: &[f64],
    radius: f64,
    rng: &mut R,
    out: &mut [f64],
) {
    let d = center.len();
    if radius == 0.0 || d == 0 {
        out.copy_from_slice(center);
        return;
    }
    let mut sq: f64 = 0.0;
    while sq == 0.0 || !sq.is_finite() {
        sq = 0.0;
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = z;
            sq += z * z;
        }
    }
    let u: f64 = rng.random();
    let rho = radius * u.powf(1.0 / d as f64);
    let scale = rho / sq.sqrt();
    for (o, c) in out.iter_mut().zip(center) {
        *o = c + scale * *o;
    }
    let r_sq = radius * radius;
    for _ in 0..64 {
        let got = dist_sq(out, center);
        if got <= r_sq && got.sqrt() <= radius {
            return;
        }
        for (o, c) in out.iter_mut().zip(center) {
            *o = c + (*o - c) * (1.0 - 1e-12);
        }
    }
    // Radius below the coordinate spacing near `center`: only the center is safe.
    out.copy_from_slice(center);
}

/// Pulls `x` radially onto the closed ball `B(center, radius)` if it lies
/// outside. Membership is exact under [`dist_sq`].
pub fn clip_to_ball(center: &[f64], radius: f64, x: &mut [f64]) {
    let r_sq = radius * radius;
    let inside = |x: &[f64]| {
        let s = dist_sq(x, center);
        s <= r_sq && s.sqrt() <= radius
    };
    if inside(x) {
        return;
    }
    let scale = radius / dist_sq(x, center).sqrt();
    for (o, c) in x.iter_mut().zip(center) {
        *o = c + (*o - c) * scale;
    }
    for _ in 0..64 {
        if inside(x) {
            return;
        }
        for (o, c) in x.iter_mut().zip(center) {
            *o = c + (*o - c) * (1.0 - 1e-12);
        }
    }
    x.copy_from_slice(center);
}

pub fn sample_ball<R: Rng + ?Sized>(center: &Point, radius: f64, rng: &mut R) -> Result<Point> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(DpError::invalid(format!("ball radius must be finite and >= 0, got {radius}")));
    }
    let mut out = vec![0.0; center.dim()];
    sample_ball_into(center, radius, rng, &mut out);
    Ok(Point::from_raw(out))
}

/// Number of `points` within closed distance `ball_radius` of `p`.
pub fn count_cover(p: &Point, points: &[Point], ball_radius: f64) -> Result<usize> {
    if !(ball_radius >= 0.0) || !ball_radius.is_finite() {
        return Err(DpError::invalid(format!("ball radius must be finite and >= 0, got {ball_radius}")));
    }
    let r_sq = ball_radius * ball_radius;
    let mut count = 0;
    for x in points {
        if x.dim() != p.dim() {
            return Err(DpError::DimensionMismatch { expected: p.dim(), got: x.dim() });
        }
        if dist_sq(p, x) <= r_sq {
            count += 1;
        }
    }
    Ok(count)
}

/// Median of a scratch buffer; even counts average the two middle values.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    debug_assert!(n > 0);
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return hi;
    }
    let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo + hi) / 2.0
}

pub(crate) fn coordinate_median_rows<'a, I>(rows: I, d: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let rows: Vec<&[f64]> = rows.into_iter().collect();
    let mut col = vec![0.0; rows.len()];
    (0..d)
        .map(|j| {
            for (c, r) in col.iter_mut().zip(&rows) {
                *c = r[j];
            }
            median_in_place(&mut col)
        })
        .collect()
}

pub fn coordinate_median(points: &[Point]) -> Result<Point> {
    let first = points.first().ok_or(DpError::EmptyInput("points"))?;
    let d = first.dim();
    if let Some(bad) = points.iter().find(|p| p.dim() != d) {
        return Err(DpError::DimensionMismatch { expected: d, got: bad.dim() });
    }
    Ok(Point::from_raw(coordinate_median_rows(points.iter().map(|p| p.coords()), d)))
}

/// Seeded sign diagonal and padded dimension for `M = (1/√d_pad)·H·D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationPlan {
    signs: Vec<f64>,
    d_orig: usize,
    d_pad: usize,
    seed: u64,
}

impl RotationPlan {
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
    pub fn d_orig(&self) -> usize {
        self.d_orig
    }
    pub fn d_pad(&self) -> usize {
        self.d_pad
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Rotates `v` (length `d_orig`) into `out` (length `d_pad`).
    pub(crate) fn rotate_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.d_orig);
        debug_assert_eq!(out.len(), self.d_pad);
        for (i, o) in out.iter_mut().enumerate() {
            *o = if i < self.d_orig { v[i] * self.signs[i] } else { 0.0 };
        }
        fwht_in_place(out);
        let s = 1.0 / (self.d_pad as f64).sqrt();
        out.iter_mut().for_each(|x| *x *= s);
    }

    pub fn rotate(&self, v: &Point) -> Result<Point> {
        if v.dim() != self.d_orig {
            return Err(DpError::DimensionMismatch { expected: self.d_orig, got: v.dim() });
        }
        let mut out = vec![0.0; self.d_pad];
        self.rotate_into(v, &mut out);
        Ok(Point::from_raw(out))
    }

    /// Inverse of [`RotationPlan::rotate`]: `M⁻¹ = (1/√d_pad)·D·H`, then truncate.
    pub fn unrotate(&self, w: &Point) -> Result<Point> {
        if w.dim() != self.d_pad {
            return Err(DpError::DimensionMismatch { expected: self.d_pad, got: w.dim() });
        }
        let mut buf = w.coords().to_vec();
        fwht_in_place(&mut buf);
        let s = 1.0 / (self.d_pad as f64).sqrt();
        let out = buf
            .iter()
            .zip(&self.signs)
            .take(self.d_orig)
            .map(|(x, sg)| x * s * sg)
            .collect();
        Ok(Point::from_raw(out))
    }
}

pub fn make_rotation(d: usize, seed: u64) -> Result<RotationPlan> {
    if d == 0 {
        return Err(DpError::invalid("rotation dimension must be at least 1"));
    }
    let d_pad = d.next_power_of_two();
    let mut rng = crate::rng::seeded(seed);
    let signs = (0..d_pad).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Ok(RotationPlan { signs, d_orig: d, d_pad, seed })
}

/// Unnormalized Walsh–Hadamard transform (Sylvester ordering), in place.
///
/// # Panics
/// If the length is not a power of two.
pub fn fwht_in_place(v: &mut [f64]) {
    let n = v.len();
    assert!(n.is_power_of_two(), "FWHT length {n} is not a power of two");
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (a, b) = block.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (s, t) = (*x + *y, *x - *y);
                *x = s;
                *y = t;
            }
        }
        h *= 2;
    }
}

/// Sylvester Hadamard entry `H[i][j] = (−1)^{popcount(i & j)}`.
pub fn hadamard_entry(i: usize, j: usize) -> f64 {
    if (i & j).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Dense `O(d²)` product `H·v`, the reference for [`fwht_in_place`].
pub fn dense_hadamard_apply(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| hadamard_entry(i, j) * v[j]).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn pt(v: &[f64]) -> Point {
        Point::new(v.to_vec()).unwrap()
    }

    #[test]
    fn point_rejects_nan() {
        assert!(Point::new(vec![0.0, f64::NAN]).is_err());
        assert!(Point::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn zero_radius_returns_center() {
        let mut rng = seeded(1);
        let q = sample_ball(&pt(&[0.0, 0.0]), 0.0, &mut rng).unwrap();
        assert_eq!(q.coords(), &[0.0, 0.0]);
    }

    #[test]
    fn negative_radius_rejected() {
        let mut rng = seeded(1);
        assert!(sample_ball(&pt(&[0.0]), -1.0, &mut rng).is_err());
    }

    #[test]
    fn ball_samples_stay_inside_exactly() {
        let mut rng = seeded(2);
        for &(d, r) in &[(1usize, 1.0), (2, 0.7), (5, 3.0), (64, 1e-3)] {
            let c = pt(&vec![0.1; d]);
            for _ in 0..20_000 {
                let q = sample_ball(&c, r, &mut rng).unwrap();
                assert!(dist_sq(&q, &c).sqrt() <= r);
            }
        }
    }

    #[test]
    fn clip_examples() {
        let mut x = vec![2.0, 0.0];
        clip_to_ball(&[0.0, 0.0], 1.0, &mut x);
        assert_eq!(x, vec![1.0, 0.0]);
        let mut y = vec![0.3, 0.4];
        clip_to_ball(&[0.0, 0.0], 1.0, &mut y);
        assert_eq!(y, vec![0.3, 0.4]);
        let mut rng = seeded(9);
        for _ in 0..10_000 {
            let c: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mut z: Vec<f64> = (0..5).map(|_| rng.random_range(-1e3..1e3)).collect();
            let r = rng.random_range(1e-3..10.0);
            clip_to_ball(&c, r, &mut z);
            assert!(dist_sq(&z, &c).sqrt() <= r);
        }
    }

    #[test]
    fn disk_inner_area_fraction() {
        let mut rng = seeded(3);
        let c = pt(&[0.0, 0.0]);
        let trials = 100_000;
        let inside = (0..trials)
            .filter(|_| norm(&sample_ball(&c, 1.0, &mut rng).unwrap()) <= 0.5)
            .count();
        let frac = inside as f64 / trials as f64;
        assert!((frac - 0.25).abs() <= 0.01, "fraction {frac}");
    }

    #[test]
    fn count_cover_examples() {
        let o = pt(&[0.0, 0.0]);
        assert_eq!(count_cover(&o, &[o.clone(), o.clone()], 1.0).unwrap(), 2);
        assert_eq!(count_cover(&pt(&[3.0, 0.0]), &[o.clone()], 1.0).unwrap(), 0);
        assert_eq!(count_cover(&pt(&[1.0, 0.0]), &[o.clone()], 1.0).unwrap(), 1);
        assert_eq!(count_cover(&pt(&[0.6, 0.8]), &[o.clone()], 1.0).unwrap(), 1);
        assert!(count_cover(&o, &[pt(&[0.0])], 1.0).is_err());
    }

    #[test]
    fn median_examples() {
        let m = coordinate_median(&[pt(&[0., 0.]), pt(&[0., 0.]), pt(&[10., 10.])]).unwrap();
        assert_eq!(m.coords(), &[0.0, 0.0]);
        assert_eq!(coordinate_median(&[pt(&[1., 2.])]).unwrap().coords(), &[1.0, 2.0]);
        let m = coordinate_median(&[pt(&[0., 0.]), pt(&[2., 4.])]).unwrap();
        assert_eq!(m.coords(), &[1.0, 2.0]);
        assert!(coordinate_median(&[]).is_err());
    }

    #[test]
    fn rotation_examples() {
        let plan = make_rotation(3, 7).unwrap();
        assert_eq!(plan.d_pad(), 4);
        assert_eq!(plan, make_rotation(3, 7).unwrap());

        let plan = RotationPlan { signs: vec![1.0, 1.0], d_orig: 2, d_pad: 2, seed: 0 };
        let r = plan.rotate(&pt(&[1.0, 0.0])).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r[0] - h).abs() < 1e-15 && (r[1] - h).abs() < 1e-15);

        let plan = make_rotation(5, 1).unwrap();
        assert!(plan.rotate(&Point::zeros(5)).unwrap().iter().all(|&x| x == 0.0));
        assert!(plan.rotate(&Point::zeros(4)).is_err());
        assert!(plan.unrotate(&Point::zeros(5)).is_err());
        assert!(make_rotation(0, 1).is_err());
    }

    #[test]
    fn sign_balance() {
        let plan = make_rotation(10_000, 11).unwrap();
        assert!(plan.signs().iter().all(|&s| s == 1.0 || s == -1.0));
        let mean = plan.signs().iter().sum::<f64>() / plan.d_pad() as f64;
        assert!(mean.abs() <= 0.05);
    }

    #[test]
    fn fwht_matches_dense() {
        let mut rng = seeded(5);
        for d in [2usize, 4, 8, 16] {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut fast = v.clone();
            fwht_in_place(&mut fast);
            let dense = dense_hadamard_apply(&v);
            for (a, b) in fast.iter().zip(&dense) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn rotate_preserves_norm_and_inverts(
            v in prop::collection::vec(-1e3f64..1e3, 1..130),
            seed in any::<u64>(),
        ) {
            let plan = make_rotation(v.len(), seed).unwrap();
            let p = Point::new(v.clone()).unwrap();
            let w = plan.rotate(&p).unwrap();
            let (nv, nw) = (norm(&v), norm(&w));
            prop_assert!((nv - nw).abs() <= 1e-9 * nv.max(1e-300));
            let back = plan.unrotate(&w).unwrap();
            let scale = nv.max(1.0);
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn median_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-100f64..100.0, 3), 1..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let pts: Vec<Point> = rows.iter().map(|r| pt(r)).collect();
            let mut shuffled = pts.clone();
            shuffled.shuffle(&mut seeded(seed));
            prop_assert_eq!(coordinate_median(&pts).unwrap(), coordinate_median(&shuffled).unwrap());
        }

        // Integer-valued data keeps every sum exact, so equality is bitwise.
        #[test]
        fn median_translation_equivariant(
            rows in prop::collection::vec(prop::collection::vec(-1000i32..1000, 2), 1..15),
            shift in prop::collection::vec(-1000i32..1000, 2),
        ) {
            let pts: Vec<Point> = rows.iter().map(|r| pt(&[r[0] as f64, r[1] as f64])).collect();
            let moved: Vec<Point> = rows
                .iter()
                .map(|r| pt(&[(r[0] + shift[0]) as f64, (r[1] + shift[1]) as f64]))
                .collect();
            let m = coordinate_median(&pts).unwrap();
            let mm = coordinate_median(&moved).unwrap();
            prop_assert_eq!(mm[0], m[0] + shift[0] as f64);
            prop_assert_eq!(mm[1], m[1] + shift[1] as f64);
        }

        #[test]
        fn median_captures_majority_box(
            inside in prop::collection::vec(prop::collection::vec(0f64..1.0, 3), 3..12),
            outside in prop::collection::vec(prop::collection::vec(-50f64..50.0, 3), 0..12),
        ) {
            prop_assume!(inside.len() > outside.len());
            let pts: Vec<Point> = inside.iter().chain(&outside).map(|r| pt(r)).collect();
            let m = coordinate_median(&pts).unwrap();
            prop_assert!(m.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn cover_count_matches_naive(
            p in prop::collection::vec(-2f64..2.0, 2),
            pts in prop::collection::vec(prop::collection::vec(-2f64..2.0, 2), 0..20),
            r in 0f64..3.0,
        ) {
            let points: Vec<Point> = pts.iter().map(|x| pt(x)).collect();
            let naive = pts.iter().filter(|x| dist_sq(&p, x) <= r * r).count();
            prop_assert_eq!(count_cover(&pt(&p), &points, r).unwrap(), naive);
        }
    }
}
