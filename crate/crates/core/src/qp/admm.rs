//! Operator-splitting iterations on `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`.

use nalgebra::DVector;

use super::csc::CscMatrix;
use super::ldl::{LdlError, LdlFactor};
use super::QpSettings;
use crate::scalar::{lit, Real};

pub(crate) const INF: f64 = 1e30;

pub(crate) struct BoxQp<T> {
    pub p: CscMatrix<T>,
    pub q: DVector<T>,
    pub a: CscMatrix<T>,
    pub l: DVector<T>,
    pub u: DVector<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AdmmStatus {
    Accepted,
    Infeasible,
    MaxIter,
}

pub(crate) struct AdmmOutcome<T> {
    pub x: DVector<T>,
    pub y: DVector<T>,
    pub status: AdmmStatus,
    pub iterations: usize,
    pub rho: T,
    pub polished: bool,
}

struct Scaling<T> {
    d: DVector<T>,
    e: DVector<T>,
    c: T,
}

fn is_eq<T: Real>(l: T, u: T) -> bool {
    (u - l).abs() <= lit::<T>(1e-9) * (T::one() + l.abs())
}

fn clamp_norm<T: Real>(v: T) -> T {
    if v < lit(1e-4) {
        T::one()
    } else {
        v.min(lit(1e4))
    }
}

fn ruiz<T: Real>(prob: &mut BoxQp<T>, iters: usize) -> Scaling<T> {
    let n = prob.q.len();
    let m = prob.l.len();
    let mut d = DVector::from_element(n, T::one());
    let mut e = DVector::from_element(m, T::one());
    let mut c = T::one();
    for _ in 0..iters {
        let pn = prob.p.col_inf_norms();
        let an = prob.a.col_inf_norms();
        let delta: Vec<T> = (0..n).map(|j| T::one() / clamp_norm(pn[j].max(an[j])).sqrt()).collect();
        let rn = prob.a.row_inf_norms();
        let eps: Vec<T> = rn.iter().map(|&r| T::one() / clamp_norm(r).sqrt()).collect();
        prob.p.scale(&delta, &delta);
        prob.a.scale(&eps, &delta);
        for j in 0..n {
            prob.q[j] *= delta[j];
            d[j] *= delta[j];
        }
        for i in 0..m {
            e[i] *= eps[i];
        }
        let pn = prob.p.col_inf_norms();
        let mean = if n > 0 {
            pn.iter().fold(T::zero(), |a, &b| a + b) / lit(n as f64)
        } else {
            T::zero()
        };
        let gamma = T::one() / clamp_norm(mean.max(prob.q.amax()));
        prob.p.scale_values(gamma);
        prob.q *= gamma;
        c *= gamma;
    }
    let big = lit::<T>(INF);
    for i in 0..m {
        if prob.l[i] > -big {
            prob.l[i] *= e[i];
        }
        if prob.u[i] < big {
            prob.u[i] *= e[i];
        }
    }
    Scaling { d, e, c }
}

struct Kkt<T> {
    n: usize,
    base: Vec<(usize, usize, T)>,
    factor: LdlFactor<T>,
}

impl<T: Real> Kkt<T> {
    fn build(p: &CscMatrix<T>, a: &CscMatrix<T>, sigma: T, rho: &DVector<T>) -> Result<Self, LdlError> {
        let n = p.ncols();
        let mut base: Vec<_> = p.iter().filter(|(r, c, _)| r <= c).collect();
        for j in 0..n {
            base.push((j, j, sigma));
        }
        for (r, c, v) in a.iter() {
            base.push((c, n + r, v));
        }
        let upper = Self::assemble(n, &base, rho);
        let factor = LdlFactor::new(&upper)?;
        Ok(Self { n, base, factor })
    }

    fn assemble(n: usize, base: &[(usize, usize, T)], rho: &DVector<T>) -> CscMatrix<T> {
        let mut trip = base.to_vec();
        for i in 0..rho.len() {
            trip.push((n + i, n + i, -T::one() / rho[i]));
        }
        CscMatrix::from_triplets(n + rho.len(), n + rho.len(), &trip)
    }

    fn update_rho(&mut self, rho: &DVector<T>) -> Result<(), LdlError> {
        let upper = Self::assemble(self.n, &self.base, rho);
        self.factor.refactor(&upper)
    }
}

pub(crate) struct AdmmInput<'a, T> {
    pub x: Option<DVector<T>>,
    pub y: Option<DVector<T>>,
    pub rho: T,
    pub accept: &'a dyn Fn(&DVector<T>, &DVector<T>) -> bool,
}

pub(crate) fn solve<T: Real>(
    orig: &BoxQp<T>,
    settings: &QpSettings<T>,
    input: AdmmInput<'_, T>,
) -> Result<AdmmOutcome<T>, LdlError> {
    let mut prob = BoxQp {
        p: orig.p.clone(),
        q: orig.q.clone(),
        a: orig.a.clone(),
        l: orig.l.clone(),
        u: orig.u.clone(),
    };
    let sc = ruiz(&mut prob, settings.scaling_iters);
    let n = prob.q.len();
    let m = prob.l.len();
    let one = T::one();
    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let big = lit::<T>(INF);
    let eq_mask: Vec<bool> = (0..m).map(|i| is_eq(prob.l[i], prob.u[i])).collect();

    let mut rho = input.rho.max(lit(1e-6)).min(lit(1e6));
    let rho_vec = |rho: T| {
        DVector::from_fn(m, |i, _| if eq_mask[i] { rho * lit(1e3) } else { rho })
    };
    let mut rv = rho_vec(rho);
    let mut kkt = Kkt::build(&prob.p, &prob.a, sigma, &rv)?;

    let unscale_x = |xs: &DVector<T>| xs.component_mul(&sc.d);
    let unscale_y = |ys: &DVector<T>| ys.component_mul(&sc.e) / sc.c;

    let mut x = match &input.x {
        Some(x0) => x0.component_div(&sc.d),
        None => DVector::zeros(n),
    };
    let mut y = match &input.y {
        Some(y0) => y0.component_div(&sc.e) * sc.c,
        None => DVector::zeros(m),
    };
    let mut z = prob.a.mul_vec(&x);
    for i in 0..m {
        z[i] = z[i].max(prob.l[i]).min(prob.u[i]);
    }

    let mut next_polish = 0usize;
    let mut iterations = 0usize;
    let eps_abs = settings.eps_abs;
    let eps_rel = settings.eps_rel;

    let polish = |x: &DVector<T>, z: &DVector<T>, y: &DVector<T>| -> Option<(DVector<T>, DVector<T>)> {
        let mut active: Vec<(usize, T)> = Vec::new();
        for i in 0..m {
            if eq_mask[i] || (prob.l[i] > -big && z[i] - prob.l[i] < -y[i]) {
                active.push((i, prob.l[i]));
            } else if prob.u[i] < big && prob.u[i] - z[i] < y[i] {
                active.push((i, prob.u[i]));
            }
        }
        let na = active.len();
        let delta = settings.polish_delta;
        let mut trip: Vec<_> = prob.p.iter().filter(|(r, c, _)| r <= c).collect();
        let mut exact = trip.clone();
        for j in 0..n {
            trip.push((j, j, delta));
            exact.push((j, j, T::zero()));
        }
        let mut row_of = vec![usize::MAX; m];
        for (k, &(i, _)) in active.iter().enumerate() {
            row_of[i] = k;
            trip.push((n + k, n + k, -delta));
            exact.push((n + k, n + k, T::zero()));
        }
        for (r, c, v) in prob.a.iter() {
            if row_of[r] != usize::MAX {
                trip.push((c, n + row_of[r], v));
                exact.push((c, n + row_of[r], v));
            }
        }
        let dim = n + na;
        let kreg = CscMatrix::from_triplets(dim, dim, &trip);
        let kex_upper = CscMatrix::from_triplets(dim, dim, &exact);
        let factor = LdlFactor::new(&kreg).ok()?;
        let mut rhs = DVector::zeros(dim);
        for j in 0..n {
            rhs[j] = -prob.q[j];
        }
        for (k, &(_, b)) in active.iter().enumerate() {
            rhs[n + k] = b;
        }
        let mut sol = factor.solve(&rhs);
        for _ in 0..settings.polish_refine_iter {
            let r = &rhs - sym_mul(&kex_upper, &sol);
            sol += factor.solve(&r);
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let xp = sol.rows(0, n).into_owned();
        let mut yp = DVector::zeros(m);
        for (k, &(i, _)) in active.iter().enumerate() {
            yp[i] = sol[n + k];
        }
        let _ = (x, z);
        Some((xp, yp))
    };

    let mut status = AdmmStatus::MaxIter;
    let mut polished = false;
    let mut result: Option<(DVector<T>, DVector<T>)> = None;

    while iterations < settings.max_iter {
        iterations += 1;
        let mut rhs = DVector::zeros(n + m);
        for j in 0..n {
            rhs[j] = sigma * x[j] - prob.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rv[i];
        }
        kkt.factor.solve_in_place(&mut rhs);
        let xt = rhs.rows(0, n).into_owned();
        let zt = DVector::from_fn(m, |i, _| z[i] + (rhs[n + i] - y[i]) / rv[i]);
        let x_new = &xt * alpha + &x * (one - alpha);
        let z_relax = &zt * alpha + &z * (one - alpha);
        let mut z_new = DVector::zeros(m);
        for i in 0..m {
            z_new[i] = (z_relax[i] + y[i] / rv[i]).max(prob.l[i]).min(prob.u[i]);
        }
        let y_new = &y + (&z_relax - &z_new).component_mul(&rv);
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        let ax = prob.a.mul_vec(&x);
        let px = sym_full_mul(&prob.p, &x);
        let aty = prob.a.tr_mul_vec(&y);
        let einv = |v: &DVector<T>| v.component_div(&sc.e).amax();
        let dinv = |v: &DVector<T>| v.component_div(&sc.d).amax() / sc.c;
        let prim = if m > 0 { einv(&(&ax - &z)) } else { T::zero() };
        let prim_scale = if m > 0 { einv(&ax).max(einv(&z)) } else { T::zero() };
        let dual = dinv(&(&px + &prob.q + &aty));
        let dual_scale = dinv(&px).max(dinv(&aty)).max(dinv(&prob.q));
        let converged = prim <= eps_abs + eps_rel * prim_scale && dual <= eps_abs + eps_rel * dual_scale;

        if converged && iterations >= next_polish {
            let cur = (unscale_x(&x), unscale_y(&y));
            if settings.polish {
                if let Some((xp, yp)) = polish(&x, &z, &y) {
                    let cand = (unscale_x(&xp), unscale_y(&yp));
                    if (input.accept)(&cand.0, &cand.1) {
                        result = Some(cand);
                        polished = true;
                        status = AdmmStatus::Accepted;
                        break;
                    }
                }
            }
            if (input.accept)(&cur.0, &cur.1) {
                result = Some(cur);
                status = AdmmStatus::Accepted;
                break;
            }
            next_polish = iterations + settings.adaptive_rho_interval;
        }

        if m > 0 && infeasible(&prob, &sc, &dy, settings.eps_prim_inf) {
            status = AdmmStatus::Infeasible;
            result = Some((unscale_x(&x), unscale_y(&dy)));
            break;
        }

        if settings.adaptive_rho && m > 0 && iterations.is_multiple_of(settings.adaptive_rho_interval) {
            let tiny = lit::<T>(1e-30);
            let num = prim / (prim_scale + tiny);
            let den = dual / (dual_scale + tiny);
            let mut new_rho = rho * (num / (den + tiny)).sqrt();
            new_rho = new_rho.max(lit(1e-6)).min(lit(1e6));
            let tol = settings.adaptive_rho_tolerance;
            if new_rho > rho * tol || new_rho < rho / tol {
                rho = new_rho;
                rv = rho_vec(rho);
                kkt.update_rho(&rv)?;
            }
        }
    }

    if status == AdmmStatus::MaxIter {
        let cur = (unscale_x(&x), unscale_y(&y));
        let mut chosen = None;
        if settings.polish {
            if let Some((xp, yp)) = polish(&x, &z, &y) {
                let cand = (unscale_x(&xp), unscale_y(&yp));
                if (input.accept)(&cand.0, &cand.1) {
                    chosen = Some(cand);
                    polished = true;
                    status = AdmmStatus::Accepted;
                }
            }
        }
        if chosen.is_none() && (input.accept)(&cur.0, &cur.1) {
            status = AdmmStatus::Accepted;
        }
        result = Some(chosen.unwrap_or(cur));
    }

    let (x, y) = result.expect("admm produced an iterate");
    Ok(AdmmOutcome {
        x,
        y,
        status,
        iterations,
        rho,
        polished,
    })
}

fn infeasible<T: Real>(prob: &BoxQp<T>, sc: &Scaling<T>, dy: &DVector<T>, eps: T) -> bool {
    let norm = dy.component_mul(&sc.e).amax();
    if norm <= lit(1e-30) {
        return false;
    }
    let big = lit::<T>(INF);
    let tol = eps * norm;
    let mut support = T::zero();
    for i in 0..dy.len() {
        let d = dy[i];
        if d > T::zero() {
            if prob.u[i] >= big {
                if d * sc.e[i] > tol {
                    return false;
                }
            } else {
                support += prob.u[i] * d;
            }
        } else if d < T::zero() {
            if prob.l[i] <= -big {
                if -d * sc.e[i] > tol {
                    return false;
                }
            } else {
                support += prob.l[i] * d;
            }
        }
    }
    let aty = prob.a.tr_mul_vec(dy).component_div(&sc.d).amax();
    aty <= tol && support < -tol
}

/// Product with a symmetric matrix stored as its upper triangle.
fn sym_mul<T: Real>(upper: &CscMatrix<T>, x: &DVector<T>) -> DVector<T> {
    let mut y = DVector::zeros(x.len());
    for (r, c, v) in upper.iter() {
        y[r] += v * x[c];
        if r != c {
            y[c] += v * x[r];
        }
    }
    y
}

fn sym_full_mul<T: Real>(full: &CscMatrix<T>, x: &DVector<T>) -> DVector<T> {
    full.mul_vec(x)
}
