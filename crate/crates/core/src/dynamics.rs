//! Time integration of the consensus dynamics and the monitors attached to it.
//!
//! Every run records, at each sample, the weighted mean `<y, v>`, the weighted
//! variance `Var_v`, optionally the certificate variance `Var_P`, and the state
//! extrema. Runs fail with [`Error::Integrity`] as soon as a monitor leaves its
//! allowed slack: mean drift, variance growth, or an excursion outside the
//! initial range.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::graph;
use crate::operator::{
    assemble_generator, compute_weight, project_pi, weighted_inner, weighted_mean,
    weighted_variance, Generator, InteractionMatrix, Weight,
};
use crate::spectral::{self, LyapunovCertificate, RestrictedOperator, SpectralReport};

/// Allowed weighted-mean drift, relative to `1 + |mean(0)|`.
pub const MEAN_DRIFT_TOLERANCE: f64 = 1e-10;
/// Allowed per-step growth of `Var_v`, relative to `Var_v(0)`.
pub const VARIANCE_SLACK: f64 = 1e-12;
/// Allowed excursion outside `[min y_in, max y_in]`, relative to the range.
pub const OVERSHOOT_TOLERANCE: f64 = 1e-8;
/// Row-sum tolerance for the discrete step matrix.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monitor {
    pub weighted_mean: f64,
    pub var_v: f64,
    pub var_p: Option<f64>,
    pub min_state: f64,
    pub max_state: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub monitors: Vec<Monitor>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn var_v(&self) -> Vec<f64> {
        self.monitors.iter().map(|m| m.var_v).collect()
    }

    pub fn has_var_p(&self) -> bool {
        self.monitors.first().is_some_and(|m| m.var_p.is_some())
    }
}

pub type PerturbationFn = Arc<dyn Fn(&DVector<f64>, &Weight) -> DVector<f64> + Send + Sync>;

/// Nonlinear feedback `f(y)` added to `A y`. Every evaluation is checked for
/// `<e, f(y)>_v = 0` and `<y, f(y)>_v <= 0`.
#[derive(Clone)]
pub enum Perturbation {
    Zero,
    /// `-beta |pi y|_v^2 pi y`.
    CubicDamping { beta: f64 },
    Custom { name: String, f: PerturbationFn },
}

impl fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Zero => write!(f, "Zero"),
            Perturbation::CubicDamping { beta } => write!(f, "CubicDamping {{ beta: {beta} }}"),
            Perturbation::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Perturbation {
    /// Looks up a registered perturbation by name.
    pub fn from_registry(name: &str, beta: f64) -> Option<Self> {
        match name {
            "zero" => Some(Perturbation::Zero),
            "cubic_damping" => Some(Perturbation::CubicDamping { beta }),
            _ => None,
        }
    }

    fn evaluate(&self, y: &DVector<f64>, v: &Weight) -> Result<DVector<f64>> {
        match self {
            Perturbation::Zero => Ok(DVector::zeros(y.len())),
            Perturbation::CubicDamping { beta } => {
                let z = project_pi(y, v)?;
                let norm2 = weighted_inner(&z, &z, v)?;
                Ok(z * (-beta * norm2))
            }
            Perturbation::Custom { f, .. } => {
                let out = f(y, v);
                check_dim(y.len(), out.len())?;
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub enum ControlSpec {
    #[default]
    None,
    /// `u = -alpha pi y`.
    JurdjevicQuinn { alpha: f64 },
    Nonlinear(Perturbation),
}

impl ControlSpec {
    fn linear_gain(&self) -> f64 {
        match self {
            ControlSpec::JurdjevicQuinn { alpha } => *alpha,
            _ => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ControlSpec::JurdjevicQuinn { alpha } if !(*alpha >= 0.0 && alpha.is_finite()) => Err(
                Error::Configuration(format!("control gain alpha must be >= 0, got {alpha}")),
            ),
            ControlSpec::Nonlinear(Perturbation::CubicDamping { beta })
                if !(*beta >= 0.0 && beta.is_finite()) =>
            {
                Err(Error::Configuration(format!("damping beta must be >= 0, got {beta}")))
            }
            _ => Ok(()),
        }
    }

    fn keeps_maximum_principle(&self) -> bool {
        !matches!(self, ControlSpec::Nonlinear(Perturbation::Custom { .. }))
    }

    /// Control value at state `y`; `None` when there is no control.
    pub fn evaluate(&self, y: &DVector<f64>, v: &Weight) -> Result<Option<DVector<f64>>> {
        match self {
            ControlSpec::None => Ok(None),
            ControlSpec::JurdjevicQuinn { alpha } => Ok(Some(project_pi(y, v)? * -*alpha)),
            ControlSpec::Nonlinear(p) => p.evaluate(y, v).map(Some),
        }
    }
}

/// Restricted operator together with its certificate, for `Var_P` monitoring.
#[derive(Debug, Clone)]
pub struct LyapunovMonitor {
    pub restricted: RestrictedOperator,
    pub certificate: LyapunovCertificate,
}

impl LyapunovMonitor {
    pub fn build(gen: &Generator, v: &Weight) -> Result<Self> {
        let restricted = spectral::restrict_a2(gen, v)?;
        let certificate = spectral::solve_lyapunov(&restricted)?;
        Ok(Self {
            restricted,
            certificate,
        })
    }

    pub fn var_p(&self, y: &DVector<f64>) -> Result<f64> {
        let z = self.restricted.coordinates(y)?;
        spectral::variance_p(&z, &self.certificate)
    }
}

/// `(A y)_i = sum_{j != i} sigma_ij (y_j - y_i)`; exact on constants.
fn apply_generator(a: &DMatrix<f64>, y: &DVector<f64>, out: &mut DVector<f64>) {
    let n = y.len();
    for i in 0..n {
        let yi = y[i];
        let mut acc = 0.0;
        for j in 0..n {
            if j != i {
                acc += a[(i, j)] * (y[j] - yi);
            }
        }
        out[i] = acc;
    }
}

struct MonitorGuard<'a> {
    v: &'a Weight,
    lyapunov: Option<&'a LyapunovMonitor>,
    mean0: f64,
    var0: f64,
    lo: f64,
    hi: f64,
    overshoot: f64,
    check_extrema: bool,
}

impl<'a> MonitorGuard<'a> {
    fn new(
        y_in: &DVector<f64>,
        v: &'a Weight,
        lyapunov: Option<&'a LyapunovMonitor>,
        check_extrema: bool,
    ) -> Result<Self> {
        let lo = y_in.min();
        let hi = y_in.max();
        let scale = lo.abs().max(hi.abs());
        Ok(Self {
            v,
            lyapunov,
            mean0: weighted_mean(y_in, v)?,
            var0: weighted_variance(y_in, v)?,
            lo,
            hi,
            overshoot: OVERSHOOT_TOLERANCE * (hi - lo) + 64.0 * f64::EPSILON * scale,
            check_extrema,
        })
    }

    fn record(&self, y: &DVector<f64>) -> Result<Monitor> {
        Ok(Monitor {
            weighted_mean: weighted_mean(y, self.v)?,
            var_v: weighted_variance(y, self.v)?,
            var_p: self.lyapunov.map(|l| l.var_p(y)).transpose()?,
            min_state: y.min(),
            max_state: y.max(),
        })
    }

    fn check(&self, step: usize, previous: &Monitor, current: &Monitor) -> Result<()> {
        let drift = (current.weighted_mean - self.mean0).abs();
        if !(drift <= MEAN_DRIFT_TOLERANCE * (1.0 + self.mean0.abs())) {
            return Err(Error::Integrity {
                step,
                monitor: "weighted_mean",
                detail: format!("drift {drift:e} from {}", self.mean0),
            });
        }
        if !(current.var_v <= previous.var_v + VARIANCE_SLACK * self.var0) {
            return Err(Error::Integrity {
                step,
                monitor: "var_v",
                detail: format!("increased from {:e} to {:e}", previous.var_v, current.var_v),
            });
        }
        if self.check_extrema
            && !(current.min_state >= self.lo - self.overshoot
                && current.max_state <= self.hi + self.overshoot)
        {
            return Err(Error::Integrity {
                step,
                monitor: "maximum_principle",
                detail: format!(
                    "state range [{}, {}] leaves [{}, {}]",
                    current.min_state, current.max_state, self.lo, self.hi
                ),
            });
        }
        Ok(())
    }
}

fn check_control_value(step: usize, y: &DVector<f64>, u: &DVector<f64>, v: &Weight) -> Result<()> {
    let scale = 1.0 + u.amax() + y.amax();
    let along_e: f64 = u.dot(v.vector());
    if !(along_e.abs() <= 1e-10 * scale) {
        return Err(Error::Integrity {
            step,
            monitor: "control_in_image",
            detail: format!("<e, u>_v = {along_e:e}"),
        });
    }
    let power = weighted_inner(y, u, v)?;
    if !(power <= 1e-12 * scale) {
        return Err(Error::Integrity {
            step,
            monitor: "control_dissipative",
            detail: format!("<y, u>_v = {power:e}"),
        });
    }
    Ok(())
}

/// Fixed-step classical RK4 for `y' = A y + u(y)`.
///
/// The step is shortened to `t_end / ceil(t_end / dt)` so the last sample sits
/// at `t_end`. Requires `dt (||A||_inf + 2 alpha) <= 1`.
pub fn integrate_rk4(
    gen: &Generator,
    y_in: &DVector<f64>,
    dt: f64,
    t_end: f64,
    v: &Weight,
    control: &ControlSpec,
    lyapunov: Option<&LyapunovMonitor>,
) -> Result<Trajectory> {
    let n = gen.n();
    check_dim(n, y_in.len())?;
    check_dim(n, v.len())?;
    control.validate()?;
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::Configuration(format!(
            "dt and t_end must be positive and finite (dt = {dt}, t_end = {t_end})"
        )));
    }
    let stiffness = gen.inf_norm() + 2.0 * control.linear_gain();
    if dt * stiffness > 1.0 {
        return Err(Error::Configuration(format!(
            "stability guard: dt * ||A||_inf = {} > 1; use dt <= {:e}",
            dt * stiffness,
            1.0 / stiffness
        )));
    }
    if let Some(l) = lyapunov {
        check_dim(n, l.restricted.basis.nrows())?;
    }

    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let guard = MonitorGuard::new(y_in, v, lyapunov, control.keeps_maximum_principle())?;
    let a = gen.matrix();

    let rhs = |y: &DVector<f64>, out: &mut DVector<f64>, step: usize| -> Result<()> {
        apply_generator(a, y, out);
        if let Some(u) = control.evaluate(y, v)? {
            check_control_value(step, y, &u, v)?;
            *out += u;
        }
        Ok(())
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        monitors: Vec::with_capacity(steps + 1),
    };
    let mut y = y_in.clone();
    let mut k1 = DVector::zeros(n);
    let mut k2 = DVector::zeros(n);
    let mut k3 = DVector::zeros(n);
    let mut k4 = DVector::zeros(n);
    let mut stage = DVector::zeros(n);

    traj.times.push(0.0);
    traj.monitors.push(guard.record(&y)?);
    traj.states.push(y.clone());

    for step in 1..=steps {
        rhs(&y, &mut k1, step)?;
        stage.copy_from(&y);
        stage.axpy(0.5 * h, &k1, 1.0);
        rhs(&stage, &mut k2, step)?;
        stage.copy_from(&y);
        stage.axpy(0.5 * h, &k2, 1.0);
        rhs(&stage, &mut k3, step)?;
        stage.copy_from(&y);
        stage.axpy(h, &k3, 1.0);
        rhs(&stage, &mut k4, step)?;
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }

        let monitor = guard.record(&y)?;
        guard.check(step, traj.monitors.last().expect("nonempty"), &monitor)?;
        traj.times.push(step as f64 * h);
        traj.monitors.push(monitor);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// `Gamma` for the explicit Euler step of the continuous model: off-diagonal
/// `sigma`, diagonal `1/dt - S_i`, so `dt Gamma` is stochastic.
pub fn euler_gamma(sigma: &InteractionMatrix, dt: f64) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Configuration(format!("dt must be positive, got {dt}")));
    }
    let gen = assemble_generator(sigma);
    let max_s = gen.row_sums().max();
    if max_s * dt > 1.0 + STOCHASTIC_TOLERANCE {
        return Err(Error::Configuration(format!(
            "stability condition max_i S_i dt = {} > 1",
            max_s * dt
        )));
    }
    let mut gamma = sigma.matrix().clone();
    for i in 0..sigma.n() {
        gamma[(i, i)] = 1.0 / dt - gen.row_sums()[i];
    }
    Ok(gamma)
}

/// `dt Gamma`, validated to be row-stochastic.
pub fn discrete_step_matrix(gamma: &DMatrix<f64>, dt: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = gamma.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Configuration(format!("dt must be positive, got {dt}")));
    }
    let step = gamma * dt;
    for i in 0..rows {
        for j in 0..cols {
            if !(step[(i, j)] >= 0.0) {
                return Err(Error::Configuration(format!(
                    "dt * Gamma not stochastic: entry ({i}, {j}) = {}",
                    step[(i, j)]
                )));
            }
        }
        let total = step.row(i).sum();
        if (total - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(Error::Configuration(format!(
                "dt * Gamma not stochastic: row {i} sums to {total}"
            )));
        }
    }
    Ok(step)
}

/// `y^{n+1} = (dt Gamma) y^n` with monitors relative to `v`.
pub fn iterate_discrete(
    gamma: &DMatrix<f64>,
    dt: f64,
    y_in: &DVector<f64>,
    steps: usize,
    v: &Weight,
) -> Result<Trajectory> {
    let step = discrete_step_matrix(gamma, dt)?;
    check_dim(step.nrows(), y_in.len())?;
    check_dim(step.nrows(), v.len())?;
    let guard = MonitorGuard::new(y_in, v, None, true)?;

    let mut traj = Trajectory::default();
    let mut y = y_in.clone();
    traj.times.push(0.0);
    traj.monitors.push(guard.record(&y)?);
    traj.states.push(y.clone());
    for k in 1..=steps {
        y = &step * &y;
        let monitor = guard.record(&y)?;
        guard.check(k, traj.monitors.last().expect("nonempty"), &monitor)?;
        traj.times.push(k as f64 * dt);
        traj.monitors.push(monitor);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// Largest modulus among the eigenvalues of a stochastic matrix once the
/// eigenvalue closest to 1 is removed.
pub fn subdominant_radius(step: &DMatrix<f64>) -> Result<f64> {
    let eigs = spectral::eigenvalues(step)?;
    let one = Complex64::new(1.0, 0.0);
    let unit = (0..eigs.len())
        .min_by(|&i, &j| (eigs[i] - one).norm().total_cmp(&(eigs[j] - one).norm()))
        .ok_or(Error::Dimension { expected: 1, found: 0 })?;
    Ok(eigs
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != unit)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max))
}

/// `||y - <y, v> e||_2`.
pub fn consensus_distance(y: &DVector<f64>, v: &Weight) -> Result<f64> {
    Ok(project_pi(y, v)?.norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionFit {
    pub rho_star: f64,
    /// `max e_n / rho*^n` over the usable samples.
    pub m: f64,
    /// Geometric-mean contraction per step over the second half.
    pub per_step: f64,
    /// Samples with error above the round-off floor.
    pub usable: usize,
}

impl ContractionFit {
    /// Largest `e_n / (m rho*^n)` over the usable samples.
    pub fn worst_ratio(&self, errors: &[f64]) -> f64 {
        errors
            .iter()
            .take(self.usable)
            .enumerate()
            .map(|(k, e)| e / (self.m * self.rho_star.powi(k as i32)))
            .fold(0.0, f64::max)
    }
}

/// Fits the geometric bound `||y^n - ybar|| <= M rho*^n` to a discrete run.
pub fn fit_contraction(traj: &Trajectory, v: &Weight, rho_star: f64) -> Result<ContractionFit> {
    let errors = traj
        .states
        .iter()
        .map(|y| consensus_distance(y, v))
        .collect::<Result<Vec<_>>>()?;
    let e0 = errors.first().copied().unwrap_or(0.0);
    let floor = 1e-13 * (1.0 + e0);
    let usable = errors.iter().take_while(|&&e| e > floor).count().max(1);
    if usable < 4 || !(rho_star > 0.0) {
        return Ok(ContractionFit {
            rho_star,
            m: e0,
            per_step: 0.0,
            usable,
        });
    }
    let half = usable / 2;
    let m = errors[..usable]
        .iter()
        .enumerate()
        .map(|(k, e)| e / rho_star.powi(k as i32))
        .fold(0.0, f64::max);
    let last = usable - 1;
    let per_step = (errors[last] / errors[half]).powf(1.0 / (last - half) as f64);
    Ok(ContractionFit {
        rho_star,
        m,
        per_step,
        usable,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub window: (f64, f64),
    /// Least-squares slope of `ln Var_v`.
    pub slope: f64,
    /// `2 Re lambda2` when a reference eigenvalue was given.
    pub predicted: Option<f64>,
    pub relative_gap: Option<f64>,
    /// Samples were dropped because `Var_v` reached round-off level.
    pub underflow_truncated: bool,
    /// The fit used the upper envelope of an oscillating series.
    pub envelope: bool,
    pub samples: usize,
}

/// Fraction of the usable samples kept by default.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.5;

fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mt)
}

/// Slope of `ln Var_v` over the trailing `window_fraction` of the samples that
/// sit above round-off. With a complex `lambda2` the fit goes through the
/// local maxima of the detrended series instead of every sample.
pub fn fit_decay(
    traj: &Trajectory,
    window_fraction: f64,
    lambda2: Option<Complex64>,
) -> Result<DecayFit> {
    if !(window_fraction > 0.0 && window_fraction <= 1.0) {
        return Err(Error::Configuration(format!(
            "window fraction must lie in (0, 1], got {window_fraction}"
        )));
    }
    let var0 = traj.monitors.first().map_or(0.0, |m| m.var_v);
    if !(var0 > 0.0) {
        return Err(Error::Configuration("Var_v is zero at t = 0; nothing to fit".into()));
    }
    let floor = 1e2 * f64::EPSILON * var0;
    let usable = traj
        .monitors
        .iter()
        .take_while(|m| m.var_v > floor)
        .count();
    let underflow_truncated = usable < traj.len();
    let start = usable - ((usable as f64 * window_fraction).ceil() as usize).min(usable);
    let points: Vec<(f64, f64)> = (start..usable)
        .map(|k| (traj.times[k], traj.monitors[k].var_v.ln()))
        .collect();
    if points.len() < 2 {
        return Err(Error::Configuration(format!(
            "decay fit window holds {} usable samples",
            points.len()
        )));
    }

    let (raw_slope, intercept) = least_squares(&points);
    let oscillating = lambda2.is_some_and(|l| l.im.abs() > 1e-9 * l.norm());
    let mut slope = raw_slope;
    let mut envelope = false;
    if oscillating {
        let residual: Vec<f64> = points
            .iter()
            .map(|(t, y)| y - (intercept + raw_slope * t))
            .collect();
        let peaks: Vec<(f64, f64)> = (1..points.len() - 1)
            .filter(|&k| residual[k] > residual[k - 1] && residual[k] >= residual[k + 1])
            .map(|k| points[k])
            .collect();
        if peaks.len() >= 2 {
            slope = least_squares(&peaks).0;
            envelope = true;
        }
    }

    let predicted = lambda2.map(|l| 2.0 * l.re);
    Ok(DecayFit {
        window: (points[0].0, points[points.len() - 1].0),
        slope,
        predicted,
        relative_gap: predicted.map(|p| (slope - p).abs() / p.abs()),
        underflow_truncated,
        envelope,
        samples: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackRates {
    /// `s(A2)`.
    pub uncontrolled_bound: f64,
    /// Spectral bound of `A2 - alpha I`.
    pub controlled_bound: f64,
}

/// Spectral bounds of the restricted operator with and without the feedback
/// `u = -alpha pi y`.
pub fn jurdjevic_quinn_rate_check(gen: &Generator, v: &Weight, alpha: f64) -> Result<FeedbackRates> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Configuration(format!("alpha must be >= 0, got {alpha}")));
    }
    let summary = graph::analyze_graph(&gen.off_diagonal(), 0.0)?;
    graph::require_strong_connectivity(&summary)?;
    let restricted = spectral::restrict_a2(gen, v)?;
    Ok(FeedbackRates {
        uncontrolled_bound: spectral::spectral_abscissa(&restricted.a2)?,
        controlled_bound: spectral::spectral_abscissa(&restricted.shifted(alpha))?,
    })
}

#[derive(Debug, Clone)]
pub struct ClassRun {
    pub members: Vec<usize>,
    pub weight: Weight,
    pub consensus: f64,
    /// `None` for a single isolated agent.
    pub spectrum: Option<SpectralReport>,
    pub trajectory: Trajectory,
    pub fit: Option<DecayFit>,
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub classes: Vec<ClassRun>,
    /// Per-class states reassembled in the original agent order.
    pub trajectory: Trajectory,
    /// Class weights scaled by `1 / classes` and placed side by side.
    pub weight: Weight,
}

/// Runs every closed communicating class as an autonomous system.
///
/// Refuses graphs with arcs between classes, since such classes are not
/// autonomous.
pub fn run_per_cluster(
    sigma: &InteractionMatrix,
    y_in: &DVector<f64>,
    dt: f64,
    t_end: f64,
    tolerance_zero: f64,
) -> Result<ClusterRun> {
    let n = sigma.n();
    check_dim(n, y_in.len())?;
    let summary = graph::analyze_graph(sigma.matrix(), tolerance_zero)?;
    for (i, targets) in graph::arcs(sigma.matrix(), tolerance_zero).iter().enumerate() {
        if let Some(&j) = targets
            .iter()
            .find(|&&j| summary.scc_assignment[i] != summary.scc_assignment[j])
        {
            return Err(Error::InterClassArcs { from: i, to: j });
        }
    }

    let components = summary.components();
    let class_count = components.len();
    let mut classes = Vec::with_capacity(class_count);
    for members in components {
        let y_block = DVector::from_iterator(members.len(), members.iter().map(|&i| y_in[i]));
        let run = if members.len() == 1 {
            let weight = Weight::uniform(1);
            let gen = assemble_generator(&sigma.restrict(&members)?);
            let trajectory = integrate_rk4(&gen, &y_block, dt, t_end, &weight, &ControlSpec::None, None)?;
            ClassRun {
                members,
                consensus: y_block[0],
                weight,
                spectrum: None,
                trajectory,
                fit: None,
            }
        } else {
            let block = sigma.restrict(&members)?;
            let gen = assemble_generator(&block);
            let weight = compute_weight(&gen)?;
            let spectrum = spectral::full_spectrum(&gen)?;
            let trajectory = integrate_rk4(&gen, &y_block, dt, t_end, &weight, &ControlSpec::None, None)?;
            let fit = fit_decay(&trajectory, DEFAULT_WINDOW_FRACTION, Some(spectrum.lambda2)).ok();
            ClassRun {
                members,
                consensus: weighted_mean(&y_block, &weight)?,
                weight,
                spectrum: Some(spectrum),
                trajectory,
                fit,
            }
        };
        classes.push(run);
    }

    let mut global_v = DVector::zeros(n);
    for class in &classes {
        for (k, &i) in class.members.iter().enumerate() {
            global_v[i] = class.weight.vector()[k] / class_count as f64;
        }
    }
    let weight = Weight::from_vector(global_v)?;

    let samples = classes[0].trajectory.len();
    let mut trajectory = Trajectory {
        times: classes[0].trajectory.times.clone(),
        ..Default::default()
    };
    let guard = MonitorGuard::new(y_in, &weight, None, true)?;
    for s in 0..samples {
        let mut y = DVector::zeros(n);
        for class in &classes {
            for (k, &i) in class.members.iter().enumerate() {
                y[i] = class.trajectory.states[s][k];
            }
        }
        trajectory.monitors.push(guard.record(&y)?);
        trajectory.states.push(y);
    }
    Ok(ClusterRun {
        classes,
        trajectory,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_agent(a: f64, b: f64) -> InteractionMatrix {
        InteractionMatrix::from_rows(&[vec![0.0, a], vec![b, 0.0]]).unwrap()
    }

    #[test]
    fn constant_state_is_equilibrium() {
        let g = assemble_generator(&two_agent(0.3, 0.7));
        let w = compute_weight(&g).unwrap();
        let y = DVector::from_element(2, 0.25);
        let t = integrate_rk4(&g, &y, 0.1, 2.0, &w, &ControlSpec::None, None).unwrap();
        assert!(t.states.iter().all(|s| s == &y));
        assert!(t.monitors.iter().all(|m| m.var_v == 0.0));
    }

    #[test]
    fn stability_guard() {
        let g = assemble_generator(&two_agent(3.0, 7.0));
        let w = compute_weight(&g).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let err = integrate_rk4(&g, &y, 0.1, 1.0, &w, &ControlSpec::None, None).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }

    #[test]
    fn step_count_hits_t_end() {
        let g = assemble_generator(&two_agent(0.3, 0.7));
        let w = compute_weight(&g).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let t = integrate_rk4(&g, &y, 0.3, 1.0, &w, &ControlSpec::None, None).unwrap();
        assert_eq!(t.len(), 5);
        assert_relative_eq!(*t.times.last().unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn custom_perturbation_violation_is_caught() {
        let g = assemble_generator(&two_agent(0.3, 0.7));
        let w = compute_weight(&g).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let push: PerturbationFn = Arc::new(|y, _| DVector::from_element(y.len(), 0.1));
        let control = ControlSpec::Nonlinear(Perturbation::Custom {
            name: "drift".into(),
            f: push,
        });
        match integrate_rk4(&g, &y, 0.1, 1.0, &w, &control, None) {
            Err(Error::Integrity { monitor, step, .. }) => {
                assert_eq!(monitor, "control_in_image");
                assert_eq!(step, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn registry_lookup() {
        assert!(matches!(Perturbation::from_registry("zero", 0.0), Some(Perturbation::Zero)));
        assert!(matches!(
            Perturbation::from_registry("cubic_damping", 2.0),
            Some(Perturbation::CubicDamping { beta }) if beta == 2.0
        ));
        assert!(Perturbation::from_registry("nope", 1.0).is_none());
    }

    #[test]
    fn identity_iteration() {
        let gamma = DMatrix::identity(3, 3) * 4.0;
        let w = Weight::uniform(3);
        let y = DVector::from_vec(vec![0.1, 0.5, 0.9]);
        let t = iterate_discrete(&gamma, 0.25, &y, 10, &w).unwrap();
        assert!(t.states.iter().all(|s| s == &y));
    }

    #[test]
    fn rank_one_step_reaches_consensus() {
        let gamma = DMatrix::from_element(2, 2, 1.0);
        let w = Weight::uniform(2);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let t = iterate_discrete(&gamma, 0.5, &y, 1, &w).unwrap();
        assert_eq!(t.states[1], DVector::from_element(2, 0.5));
        let rho = subdominant_radius(&discrete_step_matrix(&gamma, 0.5).unwrap()).unwrap();
        assert!(rho < 1e-15);
    }

    #[test]
    fn non_stochastic_step_rejected() {
        let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.5, 0.5]);
        assert!(matches!(iterate_discrete(&gamma, 0.5, &DVector::zeros(2), 1, &Weight::uniform(2)), Err(Error::Configuration(_))));
        let negative = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 1.0, 1.0]);
        assert!(discrete_step_matrix(&negative, 0.5).is_err());
    }

    #[test]
    fn euler_gamma_enforces_stability() {
        let sigma = two_agent(2.0, 1.0);
        assert!(euler_gamma(&sigma, 0.6).is_err());
        let gamma = euler_gamma(&sigma, 0.5).unwrap();
        assert_eq!(gamma[(0, 0)], 0.0);
        assert_eq!(gamma[(1, 1)], 1.0);
    }

    #[test]
    fn decay_fit_on_synthetic_exponential() {
        let k = 1.7;
        let traj = Trajectory {
            times: (0..200).map(|i| i as f64 * 0.05).collect(),
            states: vec![DVector::zeros(1); 200],
            monitors: (0..200)
                .map(|i| Monitor {
                    weighted_mean: 0.0,
                    var_v: (-k * i as f64 * 0.05).exp(),
                    var_p: None,
                    min_state: 0.0,
                    max_state: 0.0,
                })
                .collect(),
        };
        let fit = fit_decay(&traj, 0.5, None).unwrap();
        assert!((fit.slope + k).abs() < 1e-9);
        assert!(!fit.underflow_truncated);
        assert_eq!(fit.samples, 100);
        assert!(fit_decay(&traj, 0.0, None).is_err());
    }

    #[test]
    fn decay_fit_flags_underflow() {
        let traj = Trajectory {
            times: (0..10).map(f64::from).collect(),
            states: vec![DVector::zeros(1); 10],
            monitors: (0..10)
                .map(|i| Monitor {
                    weighted_mean: 0.0,
                    var_v: if i < 6 { (-(i as f64)).exp() } else { 0.0 },
                    var_p: None,
                    min_state: 0.0,
                    max_state: 0.0,
                })
                .collect(),
        };
        let fit = fit_decay(&traj, 1.0, None).unwrap();
        assert!(fit.underflow_truncated);
        assert_eq!(fit.window, (0.0, 5.0));
        assert!((fit.slope + 1.0).abs() < 1e-12);
    }

    #[test]
    fn feedback_with_zero_gain() {
        let g = assemble_generator(&two_agent(0.3, 0.7));
        let w = compute_weight(&g).unwrap();
        let r = jurdjevic_quinn_rate_check(&g, &w, 0.0).unwrap();
        assert_relative_eq!(r.uncontrolled_bound, r.controlled_bound);
        let r = jurdjevic_quinn_rate_check(&g, &w, 1.0).unwrap();
        assert_relative_eq!(r.controlled_bound, -2.0, epsilon = 1e-12);
        assert!(jurdjevic_quinn_rate_check(&g, &w, -1.0).is_err());
    }

    #[test]
    fn per_cluster_refuses_cross_arcs() {
        let sigma = InteractionMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.5],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        assert!(matches!(
            run_per_cluster(&sigma, &y, 0.1, 1.0, 0.0),
            Err(Error::InterClassArcs { from: 1, to: 2 })
        ));
    }

    #[test]
    fn per_cluster_with_isolated_agent() {
        let sigma = InteractionMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        let run = run_per_cluster(&sigma, &y, 0.1, 20.0, 0.0).unwrap();
        assert_eq!(run.classes.len(), 2);
        assert_relative_eq!(run.classes[0].consensus, 2.0 / 3.0, epsilon = 1e-14);
        assert_eq!(run.classes[1].consensus, 2.0);
        let last = run.trajectory.final_state().unwrap();
        assert_relative_eq!(last[0], 2.0 / 3.0, epsilon = 1e-9);
        assert_eq!(last[2], 2.0);
    }
}
