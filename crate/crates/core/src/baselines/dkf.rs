use nalgebra::{DMatrix, DVector, Vector2};

use crate::dynamics::RobotModel;
use crate::error::{Error, Result};
use crate::mhe::factors::{evaluate_tick, forces, initial_state, tick_factors, transition, vo_residual};
use crate::mhe::{ConstraintMode, MheConfig, NoiseModel, PriorConfig, Residual, StanceTracker, StateLayout, TickInput, TickModel};
use crate::scalar::{lit, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct DkfConfig<T> {
    pub noise: NoiseModel<T>,
    pub prior: PriorConfig<T>,
    pub use_vo: bool,
    pub stance_settle_ticks: usize,
}

impl<T: Real> Default for DkfConfig<T> {
    fn default() -> Self {
        Self::matching(&MheConfig::default())
    }
}

impl<T: Real> DkfConfig<T> {
    /// The filter that an unconstrained window-1 MHE with this configuration reduces to.
    pub fn matching(config: &MheConfig<T>) -> Self {
        Self {
            noise: config.noise.clone(),
            prior: config.prior.clone(),
            use_vo: config.use_vo,
            stance_settle_ticks: config.stance_settle_ticks,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DkfOut<T: Real> {
    pub index: usize,
    pub t: T,
    pub state: DVector<T>,
    pub covariance: DMatrix<T>,
    pub forces: Vec<Vector2<T>>,
    /// The covariance lost positive definiteness and was clamped this tick.
    pub clamped: bool,
    pub vo_applied: usize,
    pub vo_dropped: usize,
}

impl<T: Real> DkfOut<T> {
    pub fn velocity(&self) -> Vector2<T> {
        Vector2::new(self.state[StateLayout::V], self.state[StateLayout::V + 1])
    }
}

#[derive(Clone, Debug)]
struct Previous<T: Real> {
    input: TickInput<T>,
    model: TickModel<T>,
}

/// Covariance-form Kalman filter over the MHE state, built from the same process,
/// measurement and VO factors. VO pairs reaching back further than one tick are dropped.
#[derive(Clone, Debug)]
pub struct Dkf<T: Real> {
    model: RobotModel<T>,
    layout: StateLayout,
    config: DkfConfig<T>,
    mean: DVector<T>,
    covariance: DMatrix<T>,
    previous: Option<Previous<T>>,
    stance: StanceTracker,
}

impl<T: Real> Dkf<T> {
    pub fn new(model: RobotModel<T>, config: DkfConfig<T>) -> Result<Self> {
        model.validate()?;
        config.noise.validate()?;
        let layout = StateLayout::for_model(&model);
        let d = layout.dim();
        let stance = StanceTracker::new(config.stance_settle_ticks);
        Ok(Self {
            model,
            layout,
            config,
            mean: DVector::zeros(d),
            covariance: DMatrix::zeros(d, d),
            previous: None,
            stance,
        })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn step(&mut self, input: &TickInput<T>) -> Result<DkfOut<T>> {
        let d = self.layout.dim();
        let v_lin = match self.previous {
            Some(_) => Vector2::new(self.mean[StateLayout::V], self.mean[StateLayout::V + 1]),
            None => Vector2::zeros(),
        };
        let tm = evaluate_tick(&self.model, input, v_lin)?;
        let fixed = self.stance.update(&input.contacts);
        let factors = tick_factors(
            &self.layout,
            &self.config.noise,
            ConstraintMode::None,
            input,
            &tm,
            &fixed,
        )?;

        let mut vo_applied = 0;
        let mut vo_dropped = 0;
        let (mut mean, mut cov, offset) = match &self.previous {
            None => {
                let mean = initial_state(&self.model, &self.layout, input, &tm)?;
                let info = self.config.prior.information(&self.layout);
                let cov = DMatrix::from_diagonal(&info.diagonal().map(|v| T::one() / v));
                (mean, cov, 0)
            }
            Some(p) => {
                let tr = transition(&self.model, &self.layout, &self.config.noise, &p.input, &p.model, input, &tm)?;
                let (a, q) = tr.explicit();
                let mut mean = DVector::zeros(2 * d);
                mean.rows_mut(0, d).copy_from(&self.mean);
                mean.rows_mut(d, d).copy_from(&tr.apply(&self.mean));
                let pf = &self.covariance * a.transpose();
                let mut cov = DMatrix::zeros(2 * d, 2 * d);
                cov.view_mut((0, 0), (d, d)).copy_from(&self.covariance);
                cov.view_mut((0, d), (d, d)).copy_from(&pf);
                cov.view_mut((d, 0), (d, d)).copy_from(&pf.transpose());
                let pp = &a * &pf + q;
                cov.view_mut((d, d), (d, d)).copy_from(&pp);
                let mut pairs = Vec::new();
                if self.config.use_vo {
                    for pair in &input.vo {
                        if pair.tick == p.input.index {
                            pairs.push(vo_residual(&self.layout, &self.config.noise, p.input.pitch, pair.displacement));
                            vo_applied += 1;
                        } else {
                            vo_dropped += 1;
                        }
                    }
                }
                update(&mut mean, &mut cov, &pairs, 0)?;
                (mean, cov, d)
            }
        };
        update(&mut mean, &mut cov, &factors.unary, offset)?;

        self.mean = mean.rows(offset, d).into_owned();
        let marginal = cov.view((offset, offset), (d, d)).into_owned();
        let (covariance, clamped) = clamp_psd(marginal);
        self.covariance = covariance;
        self.previous = Some(Previous {
            input: input.clone(),
            model: tm,
        });
        Ok(DkfOut {
            index: input.index,
            t: input.t,
            state: self.mean.clone(),
            covariance: self.covariance.clone(),
            forces: forces(&self.layout, &self.mean),
            clamped,
            vo_applied,
            vo_dropped,
        })
    }
}

/// Joint linear update of `(mean, cov)` with residuals whose `current` block starts at
/// column `offset` (pair residuals span `offset..offset + 2d`). Zero-weight rows are skipped.
fn update<T: Real>(mean: &mut DVector<T>, cov: &mut DMatrix<T>, residuals: &[Residual<T>], offset: usize) -> Result<()> {
    let n = mean.len();
    let rows: usize = residuals.iter().map(|r| r.weight.iter().filter(|w| **w > T::zero()).count()).sum();
    if rows == 0 {
        return Ok(());
    }
    let mut h = DMatrix::zeros(rows, n);
    let mut y = DVector::zeros(rows);
    let mut r = DVector::zeros(rows);
    let mut k = 0;
    for res in residuals {
        let d = res.current.ncols();
        for i in (0..res.rows()).filter(|i| res.weight[*i] > T::zero()) {
            h.view_mut((k, offset), (1, d)).copy_from(&res.current.row(i));
            if let Some(b) = &res.next {
                h.view_mut((k, offset + d), (1, d)).copy_from(&b.row(i));
            }
            y[k] = res.target[i];
            r[k] = T::one() / res.weight[i];
            k += 1;
        }
    }
    let ph = &*cov * h.transpose();
    let mut s = &h * &ph;
    for i in 0..rows {
        s[(i, i)] += r[i];
    }
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Assembly("innovation covariance is not positive definite".into()))?;
    let gain = chol.solve(&ph.transpose()).transpose();
    let innovation = y - &h * &*mean;
    *mean += &gain * innovation;
    // Joseph form keeps the covariance symmetric and PSD.
    let ikh = DMatrix::identity(n, n) - &gain * &h;
    let mut kr = gain.clone();
    for (j, mut col) in kr.column_iter_mut().enumerate() {
        col *= r[j];
    }
    *cov = &ikh * &*cov * ikh.transpose() + kr * gain.transpose();
    Ok(())
}

/// Symmetrizes and clamps eigenvalues at `1e-12`; reports whether any were clamped.
pub(super) fn clamp_psd<T: Real>(p: DMatrix<T>) -> (DMatrix<T>, bool) {
    let half = lit::<T>(0.5);
    let sym = (&p + p.transpose()) * half;
    let floor = lit::<T>(1e-12);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= floor) {
        return (sym, false);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    ((&out + out.transpose()) * half, true)
}
