//! Parameter paths, driving schedules and uniform time grids.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type PathFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
pub type ScheduleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Monotone map from the reduced time `u = t / T` in `[0, 1]` to the path
/// coordinate `s` in `[0, 1]`.
#[derive(Clone)]
pub enum Schedule {
    /// `s = u`
    Linear,
    /// `s = u - sin(2 pi u) / (2 pi)`: same endpoints, non-uniform speed.
    Perturbed,
    Custom(ScheduleFn),
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::Linear => write!(f, "Linear"),
            Schedule::Perturbed => write!(f, "Perturbed"),
            Schedule::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Schedule {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Schedule::Linear => u,
            Schedule::Perturbed => u - (2.0 * PI * u).sin() / (2.0 * PI),
            Schedule::Custom(f) => f(u),
        }
    }

    /// ds/du.
    pub fn rate(&self, u: f64) -> f64 {
        match self {
            Schedule::Linear => 1.0,
            Schedule::Perturbed => 1.0 - (2.0 * PI * u).cos(),
            Schedule::Custom(f) => {
                let h = 1e-6;
                let lo = (u - h).max(0.0);
                let hi = (u + h).min(1.0);
                (f(hi) - f(lo)) / (hi - lo)
            }
        }
    }

    /// Checks endpoints and monotonicity on a fine sample.
    pub fn validate(&self) -> Result<()> {
        let s0 = self.eval(0.0);
        let s1 = self.eval(1.0);
        if s0.abs() > 1e-12 || (s1 - 1.0).abs() > 1e-12 {
            return Err(Error::Schedule(format!(
                "schedule endpoints must be s(0)=0, s(1)=1, got {s0}, {s1}"
            )));
        }
        let samples = 4096;
        let mut prev = s0;
        for k in 1..=samples {
            let s = self.eval(k as f64 / samples as f64);
            if !s.is_finite() || s < prev - 1e-15 {
                return Err(Error::Schedule(format!(
                    "schedule is not monotone near u = {}",
                    k as f64 / samples as f64
                )));
            }
            prev = s;
        }
        Ok(())
    }
}

/// Time-dependent external parameters `k(t) = path(s(t / T))`.
///
/// Beyond `t = T` a closed path repeats periodically and an open path stays
/// at its endpoint. A path with infinite period is static at `path(0)`.
#[derive(Clone)]
pub struct ParameterPath {
    k_dim: usize,
    path_fn: PathFn,
    schedule: Schedule,
    period: f64,
    closed: bool,
}

impl fmt::Debug for ParameterPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParameterPath")
            .field("k_dim", &self.k_dim)
            .field("schedule", &self.schedule)
            .field("period", &self.period)
            .field("closed", &self.closed)
            .finish()
    }
}

impl ParameterPath {
    pub fn new(k_dim: usize, path_fn: PathFn, schedule: Schedule, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Path(format!(
                "period must be positive, got {period}"
            )));
        }
        schedule.validate()?;
        let start = path_fn(0.0);
        if start.len() != k_dim {
            return Err(Error::Path(format!(
                "path returns {} components, expected {k_dim}",
                start.len()
            )));
        }
        Ok(Self {
            k_dim,
            path_fn,
            schedule,
            period,
            closed: false,
        })
    }

    /// Constant parameters; the model is undriven.
    pub fn fixed(k: Vec<f64>) -> Self {
        let k_dim = k.len();
        Self {
            k_dim,
            path_fn: Arc::new(move |_| k.clone()),
            schedule: Schedule::Linear,
            period: f64::INFINITY,
            closed: true,
        }
    }

    /// Marks the path as a closed loop after checking `path(1) == path(0)`.
    pub fn closed(mut self) -> Result<Self> {
        let a = (self.path_fn)(0.0);
        let b = (self.path_fn)(1.0);
        let gap = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        if gap > 1e-12 {
            return Err(Error::Path(format!(
                "path endpoints differ by {gap:e}; not a closed loop"
            )));
        }
        self.closed = true;
        Ok(self)
    }

    /// Same path traversed with a different schedule and duration.
    pub fn with_schedule(&self, schedule: Schedule, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Path(format!(
                "period must be positive, got {period}"
            )));
        }
        schedule.validate()?;
        Ok(Self {
            schedule,
            period,
            ..self.clone()
        })
    }

    pub fn k_dim(&self) -> usize {
        self.k_dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn is_static(&self) -> bool {
        self.period.is_infinite()
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Path coordinate at `s` (no schedule applied).
    pub fn point(&self, s: f64) -> Vec<f64> {
        (self.path_fn)(s)
    }

    /// Path coordinate `s(t)`; unbounded for closed paths driven past `T`.
    pub fn s_at(&self, t: f64) -> f64 {
        if self.is_static() {
            return 0.0;
        }
        let u = t / self.period;
        if self.closed {
            let turns = u.floor();
            turns + self.schedule.eval(u - turns)
        } else {
            self.schedule.eval(u.clamp(0.0, 1.0))
        }
    }

    /// ds/dt.
    pub fn s_rate(&self, t: f64) -> f64 {
        if self.is_static() {
            return 0.0;
        }
        let u = t / self.period;
        if self.closed {
            self.schedule.rate(u - u.floor()) / self.period
        } else if (0.0..=1.0).contains(&u) {
            self.schedule.rate(u) / self.period
        } else {
            0.0
        }
    }

    /// `k(t)`. Closed paths receive the unwrapped coordinate `s(t)`, so
    /// angle-like parameters stay continuous across periods.
    pub fn params_at(&self, t: f64) -> Vec<f64> {
        (self.path_fn)(self.s_at(t))
    }

    /// Drive angular frequency `2 pi / T` (zero when static).
    pub fn drive_frequency(&self) -> f64 {
        if self.is_static() {
            0.0
        } else {
            2.0 * PI / self.period
        }
    }
}

/// Uniform grid `t0, t0 + dt, ..., t1` with `samples` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    dt: f64,
    samples: usize,
}

impl TimeGrid {
    /// `samples = round((t1 - t0) / dt) + 1`; the effective step is adjusted
    /// so that the last sample lands exactly on `t1`.
    pub fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Param(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !(t1 > t0) {
            return Err(Error::Param(format!("empty time interval [{t0}, {t1}]")));
        }
        let intervals = ((t1 - t0) / dt).round().max(1.0) as usize;
        Ok(Self {
            t0,
            t1,
            dt: (t1 - t0) / intervals as f64,
            samples: intervals + 1,
        })
    }

    pub fn with_samples(t0: f64, t1: f64, samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::Param("a grid needs at least two samples".into()));
        }
        Self::new(t0, t1, (t1 - t0) / (samples - 1) as f64)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn time(&self, m: usize) -> f64 {
        if m + 1 == self.samples {
            self.t1
        } else {
            self.t0 + m as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples).map(move |m| self.time(m))
    }

    /// Index of the last sample not after `t` and the fractional position in
    /// the following interval.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let x = ((t - self.t0) / self.dt).max(0.0);
        let m = (x.floor() as usize).min(self.samples - 2);
        (m, (x - m as f64).clamp(0.0, 1.0))
    }

    /// Same as `self` but keeping every `stride`-th sample.
    pub fn coarsened(&self, stride: usize) -> Result<Self> {
        let intervals = self.samples - 1;
        if stride == 0 || intervals % stride != 0 {
            return Err(Error::Param(format!(
                "stride {stride} does not divide {intervals} intervals"
            )));
        }
        Ok(Self {
            dt: self.dt * stride as f64,
            samples: intervals / stride + 1,
            ..*self
        })
    }
}

/// Cumulative trapezoid integral of samples on a uniform grid.
pub fn cumulative_trapezoid(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}
