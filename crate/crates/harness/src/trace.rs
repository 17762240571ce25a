use nalgebra::Vector2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowStatus {
    Solved,
    /// The window QP failed and the previous estimate was propagated.
    Degraded,
    /// The filter covariance had to be clamped to stay positive definite.
    Clamped,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Solved => "solved",
            Self::Degraded => "degraded",
            Self::Clamped => "clamped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Solved, Self::Degraded, Self::Clamped].into_iter().find(|v| v.as_str() == s)
    }
}

/// One estimator output sample. Quantities an estimator does not produce are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub bias: Vector2<f64>,
    pub forces: Vec<Vector2<f64>>,
    /// Contact flags the estimator was given.
    pub contacts: Vec<bool>,
    pub status: RowStatus,
    pub iterations: usize,
    /// Largest KKT residual of the window QP.
    pub kkt: f64,
    /// Smallest stance normal force anywhere in the window.
    pub window_min_fz: f64,
    /// Largest swing force magnitude anywhere in the window.
    pub window_max_swing_f: f64,
    /// Wall time of the estimator step (ms).
    pub step_ms: f64,
}

impl TraceRow {
    /// True when this row's own forces break complementarity.
    pub fn violates_contact(&self, tol: f64) -> bool {
        let own = self
            .forces
            .iter()
            .zip(&self.contacts)
            .any(|(f, c)| if *c { f.y < -tol } else { *f != Vector2::zeros() });
        let window = self.window_max_swing_f > 0.0 || self.window_min_fz < -tol;
        own || window
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub name: String,
    pub rows: Vec<TraceRow>,
    /// Set when the estimator stopped on an error; `rows` hold the samples before it.
    pub fault: Option<String>,
}
