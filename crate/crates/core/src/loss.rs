//! Angular softplus metric loss in matrix form, with exact gradients for
//! the metric factor and for the embedded points.
//!
//! For a batch of triplets with anchor `z`, positive `z+`, negative `z-`,
//! build the d×T column matrices
//!
//! * `midpoints`:  a_i = (z_i + z_i+) / 2
//! * `pos_diffs`:  p_i = z_i - z_i+
//! * `neg_diffs`:  q_i = z_i- - a_i
//!
//! Per-triplet margin and loss, with c = 4 tan^2(alpha):
//!
//! * m_i = ||L^T p_i||^2 - c ||L^T q_i||^2
//! * J   = sum_i softplus(m_i),  g_i = sigmoid(m_i)
//!
//! Gradient w.r.t. the factor:  (P~ P^T - c N~ N^T) L  where the i-th
//! column of P~ (resp. N~) is 2 g_i p_i (resp. 2 g_i q_i). Gradients w.r.t.
//! the points follow by the chain rule through the three column definitions
//! and are validated against finite differences in the tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mining::TripletBatch;

/// The d×l metric factor; the induced squared distance between points
/// u and v is ||L^T (u - v)||^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFactor {
    matrix: DMatrix<f64>,
}

impl MetricFactor {
    /// Wraps a d×l matrix with l <= d. Orthonormality is not required here;
    /// the manifold operations check it where they need it.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() > matrix.nrows() {
            return Err(Error::invalid(format!(
                "factor must have l <= d, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(MetricFactor { matrix })
    }

    /// The first `l` columns of the d×d identity.
    pub fn identity(d: usize, l: usize) -> Result<Self> {
        if l > d {
            return Err(Error::invalid("identity factor needs l <= d"));
        }
        Ok(MetricFactor {
            matrix: DMatrix::identity(d, d).columns(0, l).into_owned(),
        })
    }

    /// Ambient dimension d.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Projection rank l.
    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Frobenius norm of L^T L - I.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.matrix.transpose() * &self.matrix;
        (gram - DMatrix::identity(self.rank(), self.rank())).norm()
    }

    /// Projects points (d×n, one column per point) into the metric space:
    /// L^T Z, an l×n matrix.
    pub fn project_points(&self, points: &DMatrix<f64>) -> DMatrix<f64> {
        self.matrix.transpose() * points
    }
}

/// Angle parameter of the loss, stored in degrees with the squared tangent
/// cached at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    alpha_deg: f64,
    tan2a: f64,
}

impl LossConfig {
    /// `alpha` in degrees, strictly between 0 and 90.
    pub fn new(alpha_deg: f64) -> Result<Self> {
        if !(alpha_deg > 0.0 && alpha_deg < 90.0) {
            return Err(Error::invalid("alpha must be in (0, 90) degrees"));
        }
        let t = (alpha_deg * std::f64::consts::PI / 180.0).tan();
        Ok(LossConfig {
            alpha_deg,
            tan2a: t * t,
        })
    }

    pub fn alpha_degrees(&self) -> f64 {
        self.alpha_deg
    }

    pub fn tan2_alpha(&self) -> f64 {
        self.tan2a
    }

    /// The margin coefficient 4 tan^2(alpha).
    pub fn margin_scale(&self) -> f64 {
        4.0 * self.tan2a
    }
}

impl Default for LossConfig {
    /// 40 degrees.
    fn default() -> Self {
        LossConfig::new(40.0).expect("40 degrees is a valid angle")
    }
}

/// Column matrices for one batch plus the per-triplet margin terms filled
/// in by [`loss`].
#[derive(Debug, Clone)]
pub struct BatchMatrices {
    /// a_i = (z_i + z_i+)/2, d×T.
    pub midpoints: DMatrix<f64>,
    /// p_i = z_i - z_i+, d×T.
    pub pos_diffs: DMatrix<f64>,
    /// q_i = z_i- - a_i, d×T.
    pub neg_diffs: DMatrix<f64>,
    /// Margins m; empty until [`loss`] runs.
    pub margins: DVector<f64>,
    /// Per-triplet softplus losses f; empty until [`loss`] runs.
    pub losses: DVector<f64>,
    /// Sigmoids g; empty until [`loss`] runs.
    pub sigmoids: DVector<f64>,
}

impl BatchMatrices {
    /// Batch size T_b.
    pub fn len(&self) -> usize {
        self.pos_diffs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_evaluated(&self) -> bool {
        self.sigmoids.len() == self.len() && !self.is_empty()
    }
}

/// Numerically stable softplus: max(x,0) + log1p(exp(-|x|)).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Assembles the midpoint/difference matrices for a batch of triplets over
/// `points` (d×n, one column per point).
pub fn build_batch(points: &DMatrix<f64>, batch: &TripletBatch) -> Result<BatchMatrices> {
    let n = points.ncols();
    let d = points.nrows();
    let t = batch.len();
    let mut midpoints = DMatrix::zeros(d, t);
    let mut pos_diffs = DMatrix::zeros(d, t);
    let mut neg_diffs = DMatrix::zeros(d, t);
    for (i, trip) in batch.triplets.iter().enumerate() {
        if trip.anchor >= n || trip.positive >= n || trip.negative >= n {
            return Err(Error::invalid(format!(
                "triplet {i} references a point outside 0..{n}"
            )));
        }
        let za = points.column(trip.anchor);
        let zp = points.column(trip.positive);
        let zn = points.column(trip.negative);
        let mid = (za + zp) * 0.5;
        midpoints.set_column(i, &mid);
        pos_diffs.set_column(i, &(za - zp));
        neg_diffs.set_column(i, &(zn - &mid));
    }
    Ok(BatchMatrices {
        midpoints,
        pos_diffs,
        neg_diffs,
        margins: DVector::zeros(0),
        losses: DVector::zeros(0),
        sigmoids: DVector::zeros(0),
    })
}

/// Evaluates the batch objective, filling margins, per-triplet losses and
/// sigmoids in `bm`. Returns J = sum_i softplus(m_i).
pub fn loss(factor: &MetricFactor, cfg: &LossConfig, bm: &mut BatchMatrices) -> Result<f64> {
    let t = bm.len();
    let proj_p = factor.project_points(&bm.pos_diffs); // l×T
    let proj_n = factor.project_points(&bm.neg_diffs);
    let c = cfg.margin_scale();
    let mut margins = DVector::zeros(t);
    let mut losses = DVector::zeros(t);
    let mut sigmoids = DVector::zeros(t);
    let mut total = 0.0;
    for i in 0..t {
        let m = proj_p.column(i).norm_squared() - c * proj_n.column(i).norm_squared();
        if !m.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite margin at triplet {i}"
            )));
        }
        margins[i] = m;
        losses[i] = softplus(m);
        sigmoids[i] = sigmoid(m);
        total += losses[i];
    }
    bm.margins = margins;
    bm.losses = losses;
    bm.sigmoids = sigmoids;
    Ok(total)
}

/// Euclidean gradient of the batch objective w.r.t. the factor:
/// `(P~ P^T - c N~ N^T) L` with 2g-scaled columns. Requires [`loss`] to have
/// populated the sigmoids.
pub fn grad_metric(
    factor: &MetricFactor,
    cfg: &LossConfig,
    bm: &BatchMatrices,
) -> Result<DMatrix<f64>> {
    if !bm.is_evaluated() {
        return Err(Error::invalid("call loss() before grad_metric()"));
    }
    let mut pos_scaled = bm.pos_diffs.clone();
    let mut neg_scaled = bm.neg_diffs.clone();
    for i in 0..bm.len() {
        let s = 2.0 * bm.sigmoids[i];
        pos_scaled.column_mut(i).scale_mut(s);
        neg_scaled.column_mut(i).scale_mut(s);
    }
    let c = cfg.margin_scale();
    let outer = pos_scaled * bm.pos_diffs.transpose() - c * (neg_scaled * bm.neg_diffs.transpose());
    Ok(outer * factor.as_matrix())
}

/// Gradient of the batch objective w.r.t. every point, returned as a d×n
/// matrix aligned with the `points` passed to [`build_batch`]; a point
/// appearing in several triplets accumulates all its contributions.
pub fn grad_points(
    factor: &MetricFactor,
    cfg: &LossConfig,
    bm: &BatchMatrices,
    batch: &TripletBatch,
    n_points: usize,
) -> Result<DMatrix<f64>> {
    if !bm.is_evaluated() {
        return Err(Error::invalid("call loss() before grad_points()"));
    }
    if batch.len() != bm.len() {
        return Err(Error::invalid("batch and matrices disagree on size"));
    }
    let d = factor.dim();
    let c = cfg.margin_scale();
    // LL^T p_i and LL^T q_i for all columns at once
    let metric_p = factor.as_matrix() * factor.project_points(&bm.pos_diffs);
    let metric_n = factor.as_matrix() * factor.project_points(&bm.neg_diffs);
    let mut dz = DMatrix::zeros(d, n_points);
    for (i, trip) in batch.triplets.iter().enumerate() {
        let g = bm.sigmoids[i];
        let wp = 2.0 * g; // coefficient on LL^T p_i
        let wn = 2.0 * c * g; // magnitude of the coefficient on LL^T q_i
        let mp = metric_p.column(i);
        let mn = metric_n.column(i);
        // d p_i/d z_a = I, d q_i/d z_a = -I/2
        // d p_i/d z_p = -I, d q_i/d z_p = -I/2
        // d q_i/d z_n = I
        let mut col = dz.column_mut(trip.anchor);
        col.axpy(wp, &mp, 1.0);
        col.axpy(0.5 * wn, &mn, 1.0);
        let mut col = dz.column_mut(trip.positive);
        col.axpy(-wp, &mp, 1.0);
        col.axpy(0.5 * wn, &mn, 1.0);
        let mut col = dz.column_mut(trip.negative);
        col.axpy(-wn, &mn, 1.0);
    }
    Ok(dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::Triplet;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(d: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng))
    }

    fn random_batch(n_points: usize, t: usize, seed: u64) -> TripletBatch {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let triplets = (0..t)
            .map(|_| loop {
                let a = rng.random_range(0..n_points);
                let p = rng.random_range(0..n_points);
                let n = rng.random_range(0..n_points);
                if a != p && a != n && p != n {
                    break Triplet {
                        anchor: a,
                        positive: p,
                        negative: n,
                    };
                }
            })
            .collect();
        TripletBatch { triplets }
    }

    /// Per-triplet scalar-loop objective: the independent oracle.
    fn loss_by_loop(
        factor: &MetricFactor,
        cfg: &LossConfig,
        points: &DMatrix<f64>,
        batch: &TripletBatch,
    ) -> f64 {
        let lmat = factor.as_matrix();
        let mut total = 0.0;
        for t in &batch.triplets {
            let za = points.column(t.anchor).into_owned();
            let zp = points.column(t.positive).into_owned();
            let zn = points.column(t.negative).into_owned();
            let avg = (&za + &zp) * 0.5;
            let d_pos = (lmat.transpose() * (&za - &zp)).norm_squared();
            let d_neg = (lmat.transpose() * (&zn - &avg)).norm_squared();
            let m: f64 = d_pos - cfg.margin_scale() * d_neg;
            total += (1.0 + m.exp()).ln();
        }
        total
    }

    #[test]
    fn build_batch_degenerate_columns() {
        // coincident anchor/positive -> zero P column, midpoint = anchor
        let mut points = random_points(3, 4, 1);
        let col0 = points.column(0).into_owned();
        points.set_column(1, &col0);
        let batch = TripletBatch {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
        };
        let bm = build_batch(&points, &batch).unwrap();
        assert_eq!(bm.pos_diffs.column(0).norm(), 0.0);
        assert_eq!(bm.midpoints.column(0), points.column(0));

        // negative at the midpoint -> zero N column
        let mut points = random_points(3, 3, 2);
        let mid = (points.column(0) + points.column(1)) * 0.5;
        points.set_column(2, &mid);
        let batch = TripletBatch {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
        };
        let bm = build_batch(&points, &batch).unwrap();
        assert!(bm.neg_diffs.column(0).norm() <= 1e-16);
    }

    #[test]
    fn build_batch_matches_scalar_construction() {
        let points = random_points(5, 12, 3);
        let batch = random_batch(12, 20, 4);
        let bm = build_batch(&points, &batch).unwrap();
        for (i, t) in batch.triplets.iter().enumerate() {
            for r in 0..5 {
                let za = points[(r, t.anchor)];
                let zp = points[(r, t.positive)];
                let zn = points[(r, t.negative)];
                assert_relative_eq!(bm.midpoints[(r, i)], (za + zp) / 2.0, max_relative = 1e-15);
                assert_relative_eq!(bm.pos_diffs[(r, i)], za - zp, max_relative = 1e-15);
                assert_relative_eq!(
                    bm.neg_diffs[(r, i)],
                    zn - (za + zp) / 2.0,
                    epsilon = 1e-15,
                    max_relative = 1e-15
                );
            }
        }
    }

    #[test]
    fn zero_factor_gives_log_two_per_triplet() {
        let points = random_points(4, 10, 5);
        let batch = random_batch(10, 7, 6);
        let mut bm = build_batch(&points, &batch).unwrap();
        let zero = MetricFactor::new(DMatrix::zeros(4, 2)).unwrap();
        let cfg = LossConfig::default();
        let j = loss(&zero, &cfg, &mut bm).unwrap();
        assert_relative_eq!(j, 7.0 * std::f64::consts::LN_2, max_relative = 1e-14);
        assert!(bm.margins.iter().all(|&m| m == 0.0));
        // both gradients vanish: grad_metric by right multiplication with
        // L = 0, grad_points because LL^T = 0
        let g = grad_metric(&zero, &cfg, &bm).unwrap();
        assert_eq!(g.norm(), 0.0);
        let dz = grad_points(&zero, &cfg, &bm, &batch, 10).unwrap();
        assert_eq!(dz.norm(), 0.0);
    }

    #[test]
    fn single_triplet_forty_five_degrees() {
        // p = (1,0), q = (0.5,0), L = I, alpha = 45deg: m = 1 - 4*0.25 = 0
        let mut points = DMatrix::zeros(2, 3);
        points.set_column(0, &nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        points.set_column(1, &nalgebra::DVector::from_vec(vec![0.0, 0.0]));
        // midpoint = (0.5, 0); negative at (1.0, 0) gives q = (0.5, 0)
        points.set_column(2, &nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        let batch = TripletBatch {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
        };
        let mut bm = build_batch(&points, &batch).unwrap();
        let factor = MetricFactor::identity(2, 2).unwrap();
        let cfg = LossConfig::new(45.0).unwrap();
        let j = loss(&factor, &cfg, &mut bm).unwrap();
        assert_relative_eq!(bm.margins[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(j, std::f64::consts::LN_2, max_relative = 1e-14);
    }

    #[test]
    fn matrix_form_matches_scalar_loop() {
        let cfg = LossConfig::default();
        for seed in 0..20 {
            let d = 6;
            let points = random_points(d, 15, 100 + seed);
            let batch = random_batch(15, 12, 200 + seed);
            let factor = MetricFactor::new(random_points(d, 3, 300 + seed)).unwrap();
            let mut bm = build_batch(&points, &batch).unwrap();
            let j = loss(&factor, &cfg, &mut bm).unwrap();
            let oracle = loss_by_loop(&factor, &cfg, &points, &batch);
            assert_relative_eq!(j, oracle, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    /// Central finite differences of the scalar-loop objective w.r.t. one
    /// factor entry.
    fn fd_grad_metric(
        factor: &MetricFactor,
        cfg: &LossConfig,
        points: &DMatrix<f64>,
        batch: &TripletBatch,
        step: f64,
    ) -> DMatrix<f64> {
        let (d, l) = (factor.dim(), factor.rank());
        DMatrix::from_fn(d, l, |r, c| {
            let mut plus = factor.as_matrix().clone();
            plus[(r, c)] += step;
            let mut minus = factor.as_matrix().clone();
            minus[(r, c)] -= step;
            let jp = loss_by_loop(&MetricFactor::new(plus).unwrap(), cfg, points, batch);
            let jm = loss_by_loop(&MetricFactor::new(minus).unwrap(), cfg, points, batch);
            (jp - jm) / (2.0 * step)
        })
    }

    #[test]
    fn grad_metric_matches_finite_differences() {
        let cfg = LossConfig::default();
        let points = random_points(6, 10, 7);
        let batch = random_batch(10, 5, 8);
        let factor = MetricFactor::new(random_points(6, 3, 9) * 0.5).unwrap();
        let mut bm = build_batch(&points, &batch).unwrap();
        loss(&factor, &cfg, &mut bm).unwrap();
        let analytic = grad_metric(&factor, &cfg, &bm).unwrap();
        let numeric = fd_grad_metric(&factor, &cfg, &points, &batch, 1e-6);
        let rel = (&analytic - &numeric).norm() / numeric.norm().max(1.0);
        assert!(rel <= 1e-5, "relative error {rel}");
    }

    #[test]
    fn grad_points_matches_finite_differences() {
        let cfg = LossConfig::default();
        let points = random_points(5, 8, 10);
        let batch = random_batch(8, 4, 11);
        let factor = MetricFactor::new(random_points(5, 2, 12) * 0.7).unwrap();
        let mut bm = build_batch(&points, &batch).unwrap();
        loss(&factor, &cfg, &mut bm).unwrap();
        let analytic = grad_points(&factor, &cfg, &bm, &batch, 8).unwrap();
        let step = 1e-6;
        let mut max_rel: f64 = 0.0;
        let mut numeric = DMatrix::zeros(5, 8);
        for pt in 0..8 {
            for r in 0..5 {
                let mut plus = points.clone();
                plus[(r, pt)] += step;
                let mut minus = points.clone();
                minus[(r, pt)] -= step;
                let bm_p = {
                    let mut b = build_batch(&plus, &batch).unwrap();
                    loss(&factor, &cfg, &mut b).unwrap()
                };
                let bm_m = {
                    let mut b = build_batch(&minus, &batch).unwrap();
                    loss(&factor, &cfg, &mut b).unwrap()
                };
                numeric[(r, pt)] = (bm_p - bm_m) / (2.0 * step);
            }
        }
        let denom = numeric.norm().max(1.0);
        max_rel = max_rel.max((&analytic - &numeric).norm() / denom);
        assert!(max_rel <= 1e-5, "relative error {max_rel}");
    }

    #[test]
    fn shared_point_gradient_is_additive() {
        let cfg = LossConfig::default();
        let points = random_points(4, 6, 13);
        let factor = MetricFactor::new(random_points(4, 2, 14)).unwrap();
        let t1 = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
        };
        let t2 = Triplet {
            anchor: 0,
            positive: 3,
            negative: 4,
        }; // shares the anchor
        let grad_of = |trips: Vec<Triplet>| {
            let batch = TripletBatch { triplets: trips };
            let mut bm = build_batch(&points, &batch).unwrap();
            loss(&factor, &cfg, &mut bm).unwrap();
            grad_points(&factor, &cfg, &bm, &batch, 6).unwrap()
        };
        let joint = grad_of(vec![t1, t2]);
        let sum = grad_of(vec![t1]) + grad_of(vec![t2]);
        assert!((joint - sum).amax() <= 1e-13);
    }

    #[test]
    fn objective_invariant_under_right_rotation() {
        let cfg = LossConfig::default();
        let d = 6;
        let l = 3;
        let points = random_points(d, 12, 20);
        let batch = random_batch(12, 10, 21);
        let factor = MetricFactor::new(random_points(d, l, 22)).unwrap();
        let mut bm = build_batch(&points, &batch).unwrap();
        let j = loss(&factor, &cfg, &mut bm).unwrap();
        let g = grad_metric(&factor, &cfg, &bm).unwrap();
        for seed in 0..20 {
            let rot = crate::manifold::random_orthogonal(l, 500 + seed);
            let rotated = MetricFactor::new(factor.as_matrix() * &rot).unwrap();
            let mut bm2 = build_batch(&points, &batch).unwrap();
            let j2 = loss(&rotated, &cfg, &mut bm2).unwrap();
            assert!(
                (j - j2).abs() <= 1e-10,
                "invariance broke: {}",
                (j - j2).abs()
            );
            // equivariance of the gradient: grad(LB) = grad(L) B
            let g2 = grad_metric(&rotated, &cfg, &bm2).unwrap();
            assert!((&g2 - &g * &rot).amax() <= 1e-10);
        }
    }

    #[test]
    fn loss_is_strictly_positive() {
        // moderate margins so the open bounds on g are not rounded away
        let cfg = LossConfig::default();
        for seed in 0..10 {
            let points = random_points(4, 9, 30 + seed);
            let batch = random_batch(9, 6, 40 + seed);
            let factor = MetricFactor::new(random_points(4, 2, 50 + seed) * 0.15).unwrap();
            let mut bm = build_batch(&points, &batch).unwrap();
            let j = loss(&factor, &cfg, &mut bm).unwrap();
            assert!(j > 0.0);
            assert!(bm.losses.iter().all(|&f| f > 0.0));
            assert!(bm.sigmoids.iter().all(|&g| g > 0.0 && g < 1.0));
        }
    }

    #[test]
    fn moving_positive_toward_anchor_decreases_loss() {
        // configuration where the q-coupling vanishes: p and q orthogonal
        // under L = I
        let mut points = DMatrix::zeros(2, 3);
        points.set_column(0, &nalgebra::DVector::from_vec(vec![1.0, 0.0])); // anchor
        points.set_column(1, &nalgebra::DVector::from_vec(vec![0.0, 0.0])); // positive
        points.set_column(2, &nalgebra::DVector::from_vec(vec![0.5, 1.0])); // negative
        let batch = TripletBatch {
            triplets: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
            }],
        };
        let factor = MetricFactor::identity(2, 2).unwrap();
        let cfg = LossConfig::default();
        let j_at = |shift: f64| {
            let mut p = points.clone();
            // move the positive toward the anchor by `shift`
            let dir = p.column(0) - p.column(1);
            let new_pos = p.column(1) + dir * shift;
            p.set_column(1, &new_pos);
            let mut bm = build_batch(&p, &batch).unwrap();
            loss(&factor, &cfg, &mut bm).unwrap()
        };
        let h = 1e-6;
        let slope = (j_at(h) - j_at(-h)) / (2.0 * h);
        assert!(
            slope < 0.0,
            "directional derivative {slope} should be negative"
        );
    }

    #[test]
    fn softplus_and_sigmoid_are_stable_at_extremes() {
        // the literal log(1+exp(x)) overflows at x = 800; the stable form
        // stays finite at both ends
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!(softplus(-800.0) < 1e-300);
        assert!(softplus(-30.0) > 0.0);
        assert!(sigmoid(800.0).is_finite() && sigmoid(-800.0).is_finite());
        assert!(sigmoid(-30.0) > 0.0);
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(3.0) + sigmoid(-3.0), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn loss_requires_evaluation_before_gradients() {
        let points = random_points(3, 5, 60);
        let batch = random_batch(5, 3, 61);
        let bm = build_batch(&points, &batch).unwrap();
        let factor = MetricFactor::identity(3, 2).unwrap();
        let cfg = LossConfig::default();
        assert!(grad_metric(&factor, &cfg, &bm).is_err());
        assert!(grad_points(&factor, &cfg, &bm, &batch, 5).is_err());
    }
}
