use nalgebra::{DMatrix, DVector, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::factors::StanceTracker;
use super::frontend::{bezier_segment, nearest_tick, spread_segment};
use super::*;
use crate::qp::{QpSolver, QpStatus};

/// Small linear-Gaussian chain `x' = F x + u + w`, `y = H x + e`.
struct Chain {
    f: DMatrix<f64>,
    u: DVector<f64>,
    q: DVector<f64>,
    h: DMatrix<f64>,
    r: DVector<f64>,
    m0: DVector<f64>,
    p0: DMatrix<f64>,
}

impl Chain {
    fn new() -> Self {
        Self {
            f: DMatrix::from_row_slice(3, 3, &[1.0, 0.05, 0.0, 0.0, 0.98, 0.05, -0.02, 0.0, 0.97]),
            u: DVector::from_vec(vec![0.01, -0.02, 0.005]),
            q: DVector::from_vec(vec![1e-3, 4e-3, 2e-3]),
            h: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.5, 1.0]),
            r: DVector::from_vec(vec![0.04, 0.09]),
            m0: DVector::from_vec(vec![0.2, -0.1, 0.3]),
            p0: DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.3, 0.4])),
        }
    }

    fn measurements(&self, steps: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut x = self.m0.clone();
        let mut ys = Vec::with_capacity(steps);
        for k in 0..steps {
            if k > 0 {
                x = &self.f * &x + &self.u + self.q.map(|v| v.sqrt() * n.sample(&mut rng));
            }
            ys.push(&self.h * &x + self.r.map(|v| v.sqrt() * n.sample(&mut rng)));
        }
        ys
    }

    fn unary(&self, y: &DVector<f64>) -> TickFactors<f64> {
        let mut t = TickFactors::new(3);
        t.unary.push(Residual::unary(self.h.clone(), y.clone(), self.r.map(|v| 1.0 / v)));
        t
    }

    fn link(&self) -> Residual<f64> {
        Residual::pair(-&self.f, DMatrix::identity(3, 3), self.u.clone(), self.q.map(|v| 1.0 / v))
    }

    fn window(&self, capacity: usize) -> ChainWindow<f64> {
        let info = self.p0.clone().try_inverse().unwrap();
        ChainWindow::new(3, capacity, ArrivalCost::new(self.m0.clone(), info, 0)).unwrap()
    }

    /// Filtered means and covariances.
    fn kalman(&self, ys: &[DVector<f64>]) -> Vec<(DVector<f64>, DMatrix<f64>)> {
        let mut x = self.m0.clone();
        let mut p = self.p0.clone();
        let rm = DMatrix::from_diagonal(&self.r);
        let mut out = Vec::new();
        for (k, y) in ys.iter().enumerate() {
            if k > 0 {
                x = &self.f * &x + &self.u;
                p = &self.f * &p * self.f.transpose() + DMatrix::from_diagonal(&self.q);
            }
            let s = &self.h * &p * self.h.transpose() + &rm;
            let gain = &p * self.h.transpose() * s.try_inverse().unwrap();
            x = &x + &gain * (y - &self.h * &x);
            p = (DMatrix::identity(3, 3) - &gain * &self.h) * &p;
            out.push((x.clone(), p.clone()));
        }
        out
    }
}

fn solve(window: &ChainWindow<f64>) -> DVector<f64> {
    let wqp = window.assemble().unwrap();
    let sol = QpSolver::new(Default::default()).solve(&wqp.problem).unwrap();
    assert_eq!(sol.status, QpStatus::Solved);
    wqp.unscale(&sol.x)
}

fn newest(stacked: &DVector<f64>, d: usize) -> DVector<f64> {
    stacked.rows(stacked.len() - d, d).into_owned()
}

fn run_chain(chain: &Chain, ys: &[DVector<f64>], capacity: usize) -> Vec<DVector<f64>> {
    let mut w = chain.window(capacity);
    let mut out = Vec::new();
    for (k, y) in ys.iter().enumerate() {
        let link = if k == 0 { vec![] } else { vec![chain.link()] };
        w.push(chain.unary(y), link).unwrap();
        while w.needs_marginalization() {
            assert!(!w.marginalize_oldest().unwrap().regularized);
        }
        out.push(newest(&solve(&w), 3));
    }
    out
}

#[test]
fn window_one_reproduces_kalman_filter() {
    let chain = Chain::new();
    let ys = chain.measurements(200, 1);
    let kf = chain.kalman(&ys);
    let mut w = chain.window(1);
    for (k, y) in ys.iter().enumerate() {
        let link = if k == 0 { vec![] } else { vec![chain.link()] };
        w.push(chain.unary(y), link).unwrap();
        while w.needs_marginalization() {
            w.marginalize_oldest().unwrap();
        }
        let x = newest(&solve(&w), 3);
        assert!((&x - &kf[k].0).amax() < 1e-8, "step {k}: {}", (&x - &kf[k].0).amax());
        // Posterior information of the lone tick: arrival plus its measurement.
        let r = chain.r.map(|v| 1.0 / v);
        let info = &w.arrival.information + chain.h.transpose() * DMatrix::from_diagonal(&r) * &chain.h;
        let p = info.try_inverse().unwrap();
        assert!((&p - &kf[k].1).amax() < 1e-8, "step {k} covariance");
    }
}

#[test]
fn window_eight_matches_kalman_mean() {
    let chain = Chain::new();
    let ys = chain.measurements(200, 2);
    let kf = chain.kalman(&ys);
    for (k, x) in run_chain(&chain, &ys, 8).iter().enumerate() {
        assert!((x - &kf[k].0).amax() < 1e-6, "step {k}");
    }
}

#[test]
fn marginalized_window_matches_batch_least_squares() {
    let chain = Chain::new();
    let steps = 200;
    let ys = chain.measurements(steps, 3);
    // Dense normal equations over the whole history.
    let d = 3;
    let n = d * steps;
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let p0i = chain.p0.clone().try_inverse().unwrap();
    h.view_mut((0, 0), (d, d)).copy_from(&p0i);
    g.rows_mut(0, d).copy_from(&(&p0i * &chain.m0));
    let rw = DMatrix::from_diagonal(&chain.r.map(|v| 1.0 / v));
    let qw = DMatrix::from_diagonal(&chain.q.map(|v| 1.0 / v));
    for (k, y) in ys.iter().enumerate() {
        let mut blk = h.view_mut((k * d, k * d), (d, d));
        blk += chain.h.transpose() * &rw * &chain.h;
        let mut gk = g.rows_mut(k * d, d);
        gk += chain.h.transpose() * &rw * y;
        if k > 0 {
            let mut a = DMatrix::zeros(d, n);
            a.view_mut((0, (k - 1) * d), (d, d)).copy_from(&(-&chain.f));
            a.view_mut((0, k * d), (d, d)).fill_with_identity();
            h += a.transpose() * &qw * &a;
            g += a.transpose() * &qw * &chain.u;
        }
    }
    let batch = h.cholesky().unwrap().solve(&g);
    let mhe = run_chain(&chain, &ys, 5);
    let last = mhe.last().unwrap();
    assert!((last - batch.rows(n - d, d)).amax() < 1e-6);
}

#[test]
fn exact_measurement_gives_rank_one_arrival() {
    let d = 3;
    let mut w = ChainWindow::<f64>::new(d, 1, ArrivalCost::uninformative(d, 0)).unwrap();
    let mut t0 = TickFactors::new(d);
    let mut a = DMatrix::zeros(1, d);
    a[(0, 0)] = 1.0;
    t0.unary.push(Residual::unary(a, DVector::from_element(1, 0.7), DVector::from_element(1, 1e6)));
    w.push(t0, vec![]).unwrap();
    let link = Residual::pair(
        -DMatrix::identity(d, d),
        DMatrix::identity(d, d),
        DVector::zeros(d),
        DVector::from_element(d, 1.0),
    );
    w.push(TickFactors::new(d), vec![link]).unwrap();
    let report = w.marginalize_oldest().unwrap();
    assert!(!report.regularized);
    let sv = w.arrival.information.clone().svd(false, false).singular_values;
    let rank = sv.iter().filter(|s| **s > 1e-9 * sv.max()).count();
    assert_eq!(rank, 1);
    assert!((w.arrival.mean[0] - 0.7).abs() < 1e-9);
}

#[test]
fn singular_elimination_is_regularized_and_flagged() {
    let d = 2;
    let mut w = ChainWindow::<f64>::new(d, 1, ArrivalCost::uninformative(d, 0)).unwrap();
    w.push(TickFactors::new(d), vec![]).unwrap();
    w.push(TickFactors::new(d), vec![]).unwrap();
    assert!(w.marginalize_oldest().unwrap().regularized);
}

#[test]
fn consistent_data_recovers_truth_under_constraints() {
    // Noise-free chain whose truth satisfies an equality and an inequality row per tick.
    let chain = Chain::new();
    let steps = 30;
    let mut truth = vec![chain.m0.clone()];
    for _ in 1..steps {
        let x = &chain.f * truth.last().unwrap() + &chain.u;
        truth.push(x);
    }
    let mut w = chain.window(8);
    for (k, x) in truth.iter().enumerate() {
        let mut t = chain.unary(&(&chain.h * x));
        t.equality.push(&[1.0, -1.0, 0.0], x[0] - x[1]);
        t.inequality.push(&[0.0, 0.0, -1.0], -x[2]);
        let link = if k == 0 { vec![] } else { vec![chain.link()] };
        w.push(t, link).unwrap();
        while w.needs_marginalization() {
            w.marginalize_oldest().unwrap();
        }
        let stacked = solve(&w);
        let first = w.first_index().unwrap();
        for j in 0..w.len() {
            let est = stacked.rows(j * 3, 3);
            assert!((est - &truth[first + j]).amax() < 1e-6, "tick {}", first + j);
        }
    }
}

#[test]
fn late_pairs_outside_window_are_rejected() {
    let chain = Chain::new();
    let mut w = chain.window(2);
    let y = DVector::zeros(2);
    for k in 0..4 {
        let link = if k == 0 { vec![] } else { vec![chain.link()] };
        w.push(chain.unary(&y), link).unwrap();
        while w.needs_marginalization() {
            w.marginalize_oldest().unwrap();
        }
    }
    assert_eq!((w.first_index(), w.last_index()), (Some(2), Some(3)));
    assert!(w.add_pair(2, chain.link()).unwrap());
    assert!(!w.add_pair(1, chain.link()).unwrap());
    assert!(!w.add_pair(3, chain.link()).unwrap());
}

#[test]
fn nearest_tick_breaks_ties_early() {
    assert_eq!(nearest_tick(0.0, 0.0, 0.005), Some(0));
    assert_eq!(nearest_tick(0.0074, 0.0, 0.005), Some(1));
    assert_eq!(nearest_tick(0.0075, 0.0, 0.005), Some(1));
    assert_eq!(nearest_tick(0.0076, 0.0, 0.005), Some(2));
    assert_eq!(nearest_tick(-0.01, 0.0, 0.005), None);
}

#[test]
fn constant_velocity_spreads_linearly() {
    let d = Vector2::new(0.03, -0.01);
    let start = Vector2::new(1.0, 0.5);
    let parts = spread_segment(Some(start - d), start, start + d, 4);
    for p in &parts {
        assert!((p - d / 4.0).amax() < 1e-9);
    }
    // The first segment extrapolates the same velocity.
    let first = spread_segment(None, start, start + d, 4);
    assert_eq!(first.len(), 4);
    for p in &first {
        assert!((p - d / 4.0).amax() < 1e-9);
    }
}

#[test]
fn bezier_interpolates_endpoints() {
    let (a, b, c) = (Vector2::new(0.0, 0.0), Vector2::new(1.0, 2.0), Vector2::new(3.0, 1.0));
    assert!((bezier_segment(a, b, c, 0.0) - b).amax() < 1e-15);
    assert!((bezier_segment(a, b, c, 1.0) - c).amax() < 1e-15);
}

#[test]
fn stance_tracker_settles_after_delay() {
    let mut s = StanceTracker::new(2);
    let seq = [true, true, true, true, false, true];
    let fixed: Vec<bool> = seq.iter().map(|c| s.update(&[*c])[0]).collect();
    assert_eq!(fixed, [false, false, true, true, false, false]);
    let mut none = StanceTracker::new(0);
    assert_eq!(none.update(&[true, false]), [true, false]);
}

proptest! {
    #[test]
    fn spread_sums_to_segment(
        px in -1.0..1.0f64, pz in -1.0..1.0f64,
        sx in -1.0..1.0f64, sz in -1.0..1.0f64,
        ex in -1.0..1.0f64, ez in -1.0..1.0f64,
        ticks in 1usize..12,
    ) {
        let (prev, start, end) = (Vector2::new(px, pz), Vector2::new(sx, sz), Vector2::new(ex, ez));
        let parts = spread_segment(Some(prev), start, end, ticks);
        prop_assert_eq!(parts.len(), ticks);
        let total: Vector2<f64> = parts.iter().sum();
        prop_assert!((total - (end - start)).amax() < 1e-12);
    }

    #[test]
    fn window_estimates_invariant_to_weight_scaling(scale in 0.01..100.0f64) {
        let chain = Chain::new();
        let ys = chain.measurements(20, 9);
        let base = run_chain(&chain, &ys, 4);
        let scaled = Chain {
            q: &chain.q * scale,
            r: &chain.r * scale,
            p0: &chain.p0 * scale,
            ..Chain::new()
        };
        let other = run_chain(&scaled, &ys, 4);
        for (a, b) in base.iter().zip(&other) {
            prop_assert!((a - b).amax() < 1e-6);
        }
    }
}
