//! Per-tick moving-horizon estimator.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Vector2};

use super::factors::{
    evaluate_tick, forces, initial_state, tick_factors, transition, vo_residual, ConstraintMode, NoiseModel,
    StanceTracker, StateLayout, TickModel,
};
use super::frontend::TickInput;
use super::window::{ArrivalCost, ChainWindow};
use crate::dynamics::RobotModel;
use crate::error::{Error, Result};
use crate::qp::{KktResiduals, QpSettings, QpSolver, QpStatus, WarmStart};
use crate::scalar::{lit, Real};

/// Standard deviations of the prior on the first tick.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorConfig<T> {
    pub position: T,
    pub velocity: T,
    pub bias: T,
    pub momentum: T,
    pub force: T,
}

impl<T: Real> Default for PriorConfig<T> {
    fn default() -> Self {
        Self {
            position: lit(0.01),
            velocity: lit(0.2),
            bias: lit(0.2),
            momentum: lit(1.0),
            force: lit(30.0),
        }
    }
}

impl<T: Real> PriorConfig<T> {
    pub fn information(&self, layout: &StateLayout) -> DMatrix<T> {
        let d = layout.dim();
        let std = |i: usize| {
            if i < StateLayout::V {
                self.position
            } else if i < StateLayout::B {
                self.velocity
            } else if i < StateLayout::M {
                self.bias
            } else if i < layout.force(0) {
                self.momentum
            } else {
                self.force
            }
        };
        DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| T::one() / (std(i) * std(i))))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MheConfig<T> {
    /// Number of ticks in the optimization window.
    pub window_size: usize,
    pub noise: NoiseModel<T>,
    pub constraints: ConstraintMode,
    pub use_vo: bool,
    pub prior: PriorConfig<T>,
    pub qp: QpSettings<T>,
    /// Stance ticks after touchdown before a foot is treated as static.
    pub stance_settle_ticks: usize,
}

impl<T: Real> Default for MheConfig<T> {
    fn default() -> Self {
        Self {
            window_size: 8,
            noise: NoiseModel::default(),
            constraints: ConstraintMode::Complementarity,
            use_vo: true,
            prior: PriorConfig::default(),
            qp: QpSettings::default(),
            stance_settle_ticks: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Solved,
    /// The window QP was not solved; the previous estimate was propagated.
    Degraded(QpStatus),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics<T> {
    pub status: StepStatus,
    pub iterations: usize,
    pub polished: bool,
    /// KKT residuals of the QP as solved (scaled variables).
    pub kkt: KktResiduals<T>,
    pub solve_time: Duration,
    pub window_len: usize,
    /// A marginalization this tick had to regularize its elimination block.
    pub regularized: bool,
    pub vo_applied: usize,
    pub vo_dropped: usize,
    /// Smallest stance normal force anywhere in the solved window.
    pub window_min_normal_force: T,
    /// Largest swing-foot force magnitude anywhere in the solved window.
    pub window_max_swing_force: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateOut<T: Real> {
    pub index: usize,
    pub t: T,
    pub state: DVector<T>,
    pub forces: Vec<Vector2<T>>,
    pub diagnostics: StepDiagnostics<T>,
}

impl<T: Real> EstimateOut<T> {
    pub fn position(&self) -> Vector2<T> {
        Vector2::new(self.state[StateLayout::P], self.state[StateLayout::P + 1])
    }

    pub fn velocity(&self) -> Vector2<T> {
        Vector2::new(self.state[StateLayout::V], self.state[StateLayout::V + 1])
    }

    pub fn accel_bias(&self) -> Vector2<T> {
        Vector2::new(self.state[StateLayout::B], self.state[StateLayout::B + 1])
    }
}

#[derive(Clone, Debug)]
struct Previous<T: Real> {
    input: TickInput<T>,
    model: TickModel<T>,
    estimate: DVector<T>,
}

#[derive(Clone, Debug)]
struct SolvedTick<T: Real> {
    index: usize,
    state: DVector<T>,
    eq_duals: DVector<T>,
    ineq_duals: DVector<T>,
}

#[derive(Clone, Debug)]
pub struct MheEstimator<T: Real> {
    model: RobotModel<T>,
    layout: StateLayout,
    config: MheConfig<T>,
    solver: QpSolver<T>,
    window: Option<ChainWindow<T>>,
    previous: Option<Previous<T>>,
    /// Pitch and contact flags of recent ticks, for late VO factors and diagnostics.
    recent: VecDeque<(usize, T, Vec<bool>)>,
    solved: Vec<SolvedTick<T>>,
    stance: StanceTracker,
}

impl<T: Real> MheEstimator<T> {
    pub fn new(model: RobotModel<T>, config: MheConfig<T>) -> Result<Self> {
        model.validate()?;
        config.noise.validate()?;
        if config.window_size == 0 {
            return Err(Error::Contract("window size must be at least 1".into()));
        }
        let layout = StateLayout::for_model(&model);
        let solver = QpSolver::new(config.qp.clone());
        let stance = StanceTracker::new(config.stance_settle_ticks);
        Ok(Self {
            model,
            layout,
            config,
            solver,
            window: None,
            previous: None,
            recent: VecDeque::new(),
            solved: Vec::new(),
            stance,
        })
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn config(&self) -> &MheConfig<T> {
        &self.config
    }

    pub fn window(&self) -> Option<&ChainWindow<T>> {
        self.window.as_ref()
    }

    /// Replaces the default prior on the first tick. Must be called before the first step.
    pub fn set_prior(&mut self, mean: DVector<T>, information: DMatrix<T>, anchor: usize) -> Result<()> {
        if self.window.is_some() {
            return Err(Error::Contract("prior can only be set before the first step".into()));
        }
        self.window = Some(ChainWindow::new(
            self.layout.dim(),
            self.config.window_size,
            ArrivalCost::new(mean, information, anchor),
        )?);
        Ok(())
    }

    pub fn step(&mut self, input: &TickInput<T>) -> Result<EstimateOut<T>> {
        let start = Instant::now();
        let d = self.layout.dim();
        let v_lin = self
            .previous
            .as_ref()
            .map_or(Vector2::zeros(), |p| Vector2::new(p.estimate[StateLayout::V], p.estimate[StateLayout::V + 1]));
        let tm = evaluate_tick(&self.model, input, v_lin)?;
        let fixed = self.stance.update(&input.contacts);
        let factors = tick_factors(
            &self.layout,
            &self.config.noise,
            self.config.constraints,
            input,
            &tm,
            &fixed,
        )?;
        let trans = match &self.previous {
            Some(p) => Some(transition(&self.model, &self.layout, &self.config.noise, &p.input, &p.model, input, &tm)?),
            None => None,
        };
        if self.window.is_none() {
            let mean = initial_state(&self.model, &self.layout, input, &tm)?;
            let info = self.config.prior.information(&self.layout);
            self.window = Some(ChainWindow::new(d, self.config.window_size, ArrivalCost::new(mean, info, input.index))?);
        }
        let window = self.window.as_mut().unwrap();
        let link = trans.iter().map(|t| t.residual()).collect();
        let pushed = window.push(factors, link)?;
        if pushed != input.index {
            return Err(Error::Contract(format!(
                "tick {} pushed out of order (expected {pushed})",
                input.index
            )));
        }
        self.recent.push_back((input.index, input.pitch, input.contacts.clone()));
        while self.recent.len() > self.config.window_size + 16 {
            self.recent.pop_front();
        }

        let mut vo_applied = 0;
        let mut vo_dropped = 0;
        if self.config.use_vo {
            for pair in &input.vo {
                let pitch = self.recent.iter().find(|r| r.0 == pair.tick).map(|r| r.1);
                let added = match pitch {
                    Some(pitch) => window.add_pair(
                        pair.tick,
                        vo_residual(&self.layout, &self.config.noise, pitch, pair.displacement),
                    )?,
                    None => false,
                };
                if added {
                    vo_applied += 1;
                } else {
                    vo_dropped += 1;
                }
            }
        }

        let mut regularized = false;
        while window.needs_marginalization() {
            regularized |= window.marginalize_oldest()?.regularized;
        }

        let wqp = window.assemble()?;
        let predicted = match (&trans, &self.previous) {
            (Some(t), Some(p)) => Some(t.apply(&p.estimate)),
            _ => None,
        };
        let warm = warm_start(&self.solved, d, window, predicted);
        let warm = warm.map(|(x, y, z)| WarmStart {
            x: wqp.scale(&x),
            eq_duals: y,
            ineq_duals: z,
        });
        let sol = self.solver.solve_warm(&wqp.problem, warm.as_ref())?;

        let (status, estimate) = if sol.status == QpStatus::Solved {
            let x = wqp.unscale(&sol.x);
            let mut solved = Vec::with_capacity(wqp.ticks);
            let (mut re, mut ri) = (0, 0);
            for k in 0..wqp.ticks {
                let index = wqp.first + k;
                let f = window.tick(index).unwrap();
                let (ne, ni) = (f.equality.rows(), f.inequality.rows());
                solved.push(SolvedTick {
                    index,
                    state: x.rows(k * d, d).into_owned(),
                    eq_duals: sol.eq_duals.rows(re, ne).into_owned(),
                    ineq_duals: sol.ineq_duals.rows(ri, ni).into_owned(),
                });
                re += ne;
                ri += ni;
            }
            self.solved = solved;
            (StepStatus::Solved, x.rows((wqp.ticks - 1) * d, d).into_owned())
        } else {
            self.solved.clear();
            let fallback = match (&trans, &self.previous) {
                (Some(t), Some(p)) => t.apply(&p.estimate),
                _ => window.arrival.mean.clone(),
            };
            (StepStatus::Degraded(sol.status), fallback)
        };

        let (min_fz, max_swing) = self.window_force_extremes();
        let diagnostics = StepDiagnostics {
            status,
            iterations: sol.iterations,
            polished: sol.polished,
            kkt: sol.residuals,
            solve_time: start.elapsed(),
            window_len: wqp.ticks,
            regularized,
            vo_applied,
            vo_dropped,
            window_min_normal_force: min_fz,
            window_max_swing_force: max_swing,
        };
        self.previous = Some(Previous {
            input: input.clone(),
            model: tm,
            estimate: estimate.clone(),
        });
        Ok(EstimateOut {
            index: input.index,
            t: input.t,
            forces: forces(&self.layout, &estimate),
            state: estimate,
            diagnostics,
        })
    }

    fn window_force_extremes(&self) -> (T, T) {
        let mut min_fz: Option<T> = None;
        let mut max_swing = T::zero();
        for s in &self.solved {
            let Some(flags) = self.recent.iter().find(|r| r.0 == s.index).map(|r| &r.2) else {
                continue;
            };
            for (foot, f) in forces(&self.layout, &s.state).iter().enumerate() {
                if flags[foot] {
                    min_fz = Some(match min_fz {
                        Some(m) if m <= f.y => m,
                        _ => f.y,
                    });
                } else {
                    max_swing = max_swing.max(f.norm());
                }
            }
        }
        (min_fz.unwrap_or(T::zero()), max_swing)
    }
}

/// Previous solution shifted onto the current window; the new tick is predicted.
fn warm_start<T: Real>(
    solved: &[SolvedTick<T>],
    d: usize,
    window: &ChainWindow<T>,
    predicted: Option<DVector<T>>,
) -> Option<(DVector<T>, DVector<T>, DVector<T>)> {
    let predicted = predicted?;
    if solved.is_empty() {
        return None;
    }
    let first = window.first_index()?;
    let last = window.last_index()?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    for index in first..=last {
        let f = window.tick(index)?;
        match solved.iter().find(|s| s.index == index) {
            Some(s) if s.eq_duals.len() == f.equality.rows() && s.ineq_duals.len() == f.inequality.rows() => {
                x.extend(s.state.iter().copied());
                y.extend(s.eq_duals.iter().copied());
                z.extend(s.ineq_duals.iter().copied());
            }
            _ => {
                if predicted.len() != d {
                    return None;
                }
                x.extend(predicted.iter().copied());
                y.extend(std::iter::repeat_n(T::zero(), f.equality.rows()));
                z.extend(std::iter::repeat_n(T::zero(), f.inequality.rows()));
            }
        }
    }
    Some((DVector::from_vec(x), DVector::from_vec(y), DVector::from_vec(z)))
}
