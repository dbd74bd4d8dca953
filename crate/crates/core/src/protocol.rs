//! The two-step reservoir schedule: step construction by the intensity and
//! detuning swap, regime checks, and end-to-end runs on the Fock, Gaussian
//! or collision engine.

use serde::{Deserialize, Serialize};

use crate::analysis::{self, FieldProbe, SqueezingReport, FIELD_OBSERVABLES};
use crate::dynamics::{
    self, ArrivalProcess, CollisionSpec, Jump, LindbladOptions, OverlapPolicy, Probe, Trajectory,
};
use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianState};
use crate::hilbert::{AtomLevel, DensityMatrix, SpaceDescriptor};
use crate::linalg::C64;
use crate::model::{self, Channel, DerivedParams, PhysicalParams, StarkShifts};

/// Relative tolerance on quantities that must agree between the two steps.
const STEP_MATCH_TOL: f64 = 1e-9;

pub const DISPERSIVE_LIMIT: f64 = model::DISPERSIVE_LIMIT;
pub const WEAK_COUPLING_LIMIT: f64 = 0.2;
pub const SINGLE_ATOM_LIMIT: f64 = 0.2;
/// Largest accepted spontaneous-emission probability Γe·2T.
pub const DECAY_LIMIT: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStep {
    pub params: PhysicalParams,
    pub derived: DerivedParams,
    pub atom_state: AtomLevel,
    pub duration: f64,
}

impl ProtocolStep {
    /// Derives the channel and its injection state from `params`.
    pub fn new(params: PhysicalParams, duration: f64) -> Result<Self> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::Protocol(format!(
                "step duration {duration} must be >= 0"
            )));
        }
        let derived = model::derive_rates(&params)?;
        Ok(Self {
            params,
            derived,
            atom_state: derived.channel.atom_state(),
            duration,
        })
    }

    pub fn channel(&self) -> Channel {
        self.derived.channel
    }

    pub fn gamma(&self) -> f64 {
        self.derived.gamma
    }

    fn collision_spec(&self, include_stark: bool) -> CollisionSpec {
        CollisionSpec {
            derived: self.derived,
            stark: if include_stark {
                StarkShifts::from_params(&self.params)
            } else {
                StarkShifts::zero()
            },
            atom: self.atom_state,
            tau: self.params.tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Fock,
    #[default]
    Gaussian,
    Collision,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fock" => Ok(Engine::Fock),
            "gaussian" => Ok(Engine::Gaussian),
            "collision" => Ok(Engine::Collision),
            other => Err(Error::Config(format!(
                "engine must be fock, gaussian or collision, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub steps: Vec<ProtocolStep>,
    pub engine: Engine,
    pub seed: u64,
    pub truncation: (usize, usize),
    /// Collision-engine ensemble size.
    pub trajectories: usize,
    pub overlap_policy: OverlapPolicy,
    /// Keep the Stark shifts in the collision Hamiltonian.
    pub include_stark: bool,
    /// Samples recorded per step (plus the initial point).
    pub samples_per_step: usize,
}

impl ProtocolSpec {
    /// Wraps `steps` with default run options and checks the cross-step
    /// invariants.
    pub fn from_steps(steps: Vec<ProtocolStep>) -> Result<Self> {
        let spec = Self {
            steps,
            engine: Engine::default(),
            seed: 0,
            truncation: (15, 15),
            trajectories: 200,
            overlap_policy: OverlapPolicy::default(),
            include_stark: false,
            samples_per_step: 50,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .steps
            .first()
            .ok_or_else(|| Error::Protocol("protocol has no steps".into()))?;
        let sum = |p: &PhysicalParams| p.delta1.abs() + p.delta2.abs();
        for step in &self.steps {
            if step.atom_state != step.channel().atom_state() {
                return Err(Error::Protocol(format!(
                    "channel {:?} needs atoms in {:?}",
                    step.channel(),
                    step.channel().atom_state()
                )));
            }
            let dr = (step.derived.r - first.derived.r).abs();
            if dr > STEP_MATCH_TOL * first.derived.r.max(1e-300) {
                return Err(Error::Protocol(format!(
                    "steps target different squeezing: r = {} vs {}",
                    first.derived.r, step.derived.r
                )));
            }
            let ds = (sum(&step.params) - sum(&first.params)).abs();
            if ds > STEP_MATCH_TOL * sum(&first.params) {
                return Err(Error::Protocol(
                    "|delta1| + |delta2| differs between steps".into(),
                ));
            }
        }
        if self.truncation.0 == 0 || self.truncation.1 == 0 {
            return Err(Error::Protocol("truncation must be at least 1".into()));
        }
        if self.engine == Engine::Collision && self.trajectories == 0 {
            return Err(Error::Protocol(
                "collision engine needs trajectories >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.steps[0].derived.epsilon
    }

    pub fn r(&self) -> f64 {
        self.steps[0].derived.r
    }

    pub fn total_duration(&self) -> f64 {
        self.steps.iter().map(|s| s.duration).sum()
    }

    pub fn field_space(&self) -> Result<SpaceDescriptor> {
        SpaceDescriptor::field(self.truncation.0, self.truncation.1)
    }

    /// Sets every step's duration to `gamma_t / γ_step`.
    pub fn with_gamma_t(mut self, gamma_t: f64) -> Result<Self> {
        for s in &mut self.steps {
            if !(s.gamma() > 0.0) {
                return Err(Error::Protocol(
                    "gamma = r_a theta_b^2 tau^2 is zero; set r_a_hz and tau_s".into(),
                ));
            }
            s.duration = gamma_t / s.gamma();
        }
        Ok(self)
    }

    /// Sets every step's duration from the preparation-time estimate.
    pub fn with_n_target(mut self, n_target: f64) -> Result<Self> {
        for s in &mut self.steps {
            s.duration = analysis::preparation_time(s.derived.r, s.gamma(), n_target)?.per_step;
        }
        Ok(self)
    }

    pub fn with_durations(mut self, durations: &[f64]) -> Result<Self> {
        if durations.len() != self.steps.len() {
            return Err(Error::Protocol("one duration per step".into()));
        }
        for (s, &d) in self.steps.iter_mut().zip(durations) {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Protocol(format!("step duration {d} must be >= 0")));
            }
            s.duration = d;
        }
        Ok(self)
    }

    pub fn reversed(mut self) -> Self {
        self.steps.reverse();
        self
    }
}

/// Intensities of the constructed step, as two-photon amplitudes Ω̃ = Ω g.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SwapRule {
    /// Ω̃′1 = Ω̃2, Ω̃′2 = Ω̃1.
    #[default]
    Symmetric,
    Explicit {
        omega_tilde1: f64,
        omega_tilde2: f64,
    },
}

/// Ordering relation |Ω̃1| − |Ω̃′2| ≥ |Ω̃′1| − |Ω̃2| between Step 1
/// (unprimed) and Step 2 (primed). The symmetric swap meets it with
/// equality, so equality within rounding is accepted.
fn ordering_holds(step1: (f64, f64), step2: (f64, f64)) -> bool {
    let lhs = step1.0.abs() - step2.1.abs();
    let rhs = step2.0.abs() - step1.1.abs();
    let scale = step1
        .0
        .abs()
        .max(step1.1.abs())
        .max(step2.0.abs())
        .max(step2.1.abs());
    lhs >= rhs - 1e-12 * scale
}

/// Builds the companion step from `given` and returns both in execution
/// order: the b1 channel (atoms in g) first, then b2 (atoms in h).
///
/// With `given` as Step 1 the companion detunings are
/// |Δ′1| = |Ω̃′1/Ω̃2| |Δ2|, |Δ′2| = |Ω̃′2/Ω̃1| |Δ1|; a Step-2 input is
/// inverted through the same relations. Couplings g are kept, drives are
/// Ω = Ω̃/g, and each detuning keeps its sign.
pub fn build_two_step_protocol(given: &PhysicalParams, rule: SwapRule) -> Result<ProtocolSpec> {
    let d = model::derive_rates(given)?;
    let (wt1, wt2) = given.omega_tilde();
    let (nt1, nt2) = match rule {
        SwapRule::Symmetric => (wt2.abs(), wt1.abs()),
        SwapRule::Explicit {
            omega_tilde1,
            omega_tilde2,
        } => (omega_tilde1.abs(), omega_tilde2.abs()),
    };
    if !(nt1 > 0.0 && nt2 > 0.0) || !nt1.is_finite() || !nt2.is_finite() {
        return Err(Error::Protocol(
            "swap intensities must be finite and nonzero".into(),
        ));
    }
    let given_is_step1 = d.channel == Channel::B1;
    let ordered = if given_is_step1 {
        ordering_holds((wt1, wt2), (nt1, nt2))
    } else {
        ordering_holds((nt1, nt2), (wt1, wt2))
    };
    if !ordered {
        return Err(Error::Protocol(
            "swap violates |W1| - |W2'| >= |W1'| - |W2|".into(),
        ));
    }
    // The relations read the same in both directions.
    let d1 = (nt1 / wt2).abs() * given.delta2.abs();
    let d2 = (nt2 / wt1).abs() * given.delta1.abs();
    let companion = PhysicalParams {
        omega1: nt1 / given.g1.abs() * given.omega1.signum(),
        omega2: nt2 / given.g2.abs() * given.omega2.signum(),
        delta1: d1 * given.delta1.signum(),
        delta2: d2 * given.delta2.signum(),
        ..*given
    };
    let before = given.delta1.abs() + given.delta2.abs();
    let after = d1 + d2;
    if (before - after).abs() > STEP_MATCH_TOL * before {
        return Err(Error::Protocol(format!(
            "swap changes |delta1| + |delta2| from {before:e} to {after:e}"
        )));
    }
    let a = ProtocolStep::new(*given, 0.0)?;
    let b = ProtocolStep::new(companion, 0.0)?;
    if a.channel() == b.channel() {
        return Err(Error::Protocol(
            "swap did not reverse the channel ordering".into(),
        ));
    }
    let steps = if given_is_step1 {
        vec![a, b]
    } else {
        vec![b, a]
    };
    ProtocolSpec::from_steps(steps)
}

/// Rescales the drive of the weaker channel so that `Θ_weak / Θ_strong = r`.
pub fn params_with_ratio(p: &PhysicalParams, r: f64) -> Result<PhysicalParams> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParams(format!("r = {r} must lie in (0, 1)")));
    }
    let d = model::derive_rates(p)?;
    let mut q = *p;
    match d.channel {
        Channel::B1 => q.omega2 = p.omega2.signum() * r * d.theta1 * (p.delta2 / p.g2).abs(),
        Channel::B2 => q.omega1 = p.omega1.signum() * r * d.theta2 * (p.delta1 / p.g1).abs(),
    }
    q.validate()?;
    Ok(q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub checks: Vec<RegimeCheck>,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&RegimeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} = {:.4e} exceeds {:.1e}", c.name, c.value, c.limit))
            .collect()
    }
}

/// Dispersive, weak-coupling, single-atom and spontaneous-emission checks.
/// `total_time` is the full protocol duration 2T used for Γe·2T.
pub fn validate_regime(p: &PhysicalParams, d: &DerivedParams, total_time: f64) -> ValidityReport {
    let check = |name: &str, value: f64, limit: f64| RegimeCheck {
        name: name.into(),
        value,
        limit,
        pass: value <= limit,
    };
    let decay = model::spontaneous_decay_estimate(p).rate * total_time;
    ValidityReport {
        checks: vec![
            check("dispersive_ratio", p.dispersive_ratio(), DISPERSIVE_LIMIT),
            check("theta_b_tau", d.theta_b * p.tau, WEAK_COUPLING_LIMIT),
            check("r_a_tau", p.r_a * p.tau, SINGLE_ATOM_LIMIT),
            check("decay_probability", decay, DECAY_LIMIT),
        ],
    }
}

/// Starting field state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialField {
    #[default]
    Vacuum,
    /// Number state |n1, n2>.
    Fock(usize, usize),
    /// Coherent amplitudes `[Re α1, Im α1, Re α2, Im α2]`.
    Coherent([f64; 4]),
    /// Thermal occupations.
    Thermal(f64, f64),
    #[serde(skip)]
    Density(DensityMatrix),
    #[serde(skip)]
    Gaussian(GaussianState),
}

impl InitialField {
    fn alphas(a: &[f64; 4]) -> (C64, C64) {
        (C64::new(a[0], a[1]), C64::new(a[2], a[3]))
    }

    pub fn to_density(&self, s: SpaceDescriptor) -> Result<DensityMatrix> {
        let mismatch = |what: &str| {
            Error::Protocol(format!(
                "{what} initial state is not available on the Fock engines"
            ))
        };
        match self {
            InitialField::Vacuum => Ok(DensityMatrix::vacuum(s)),
            InitialField::Fock(n1, n2) => DensityMatrix::basis(s, AtomLevel::G, *n1, *n2),
            InitialField::Coherent(a) => {
                let (a1, a2) = Self::alphas(a);
                if !model::displacement_within_truncation(s, a1, a2) {
                    return Err(Error::Truncation {
                        required: (4.0 * a1.norm_sqr().max(a2.norm_sqr())).ceil() as usize,
                        reason: "coherent amplitude too large for the truncation".into(),
                    });
                }
                let d = model::build_displacement_operator(s, a1, a2)?;
                DensityMatrix::vacuum(s).transformed(&d)
            }
            InitialField::Thermal(n1, n2) => thermal_density(s, *n1, *n2),
            InitialField::Density(rho) => {
                rho.space().ensure_same(&s)?;
                Ok(rho.clone())
            }
            InitialField::Gaussian(_) => Err(mismatch("a Gaussian")),
        }
    }

    pub fn to_gaussian(&self) -> Result<GaussianState> {
        match self {
            InitialField::Vacuum | InitialField::Fock(0, 0) => Ok(gaussian::gaussian_vacuum()),
            InitialField::Coherent(a) => {
                let (a1, a2) = Self::alphas(a);
                Ok(gaussian::gaussian_vacuum().displaced(a1, a2))
            }
            InitialField::Thermal(n1, n2) => gaussian::gaussian_thermal(*n1, *n2),
            InitialField::Gaussian(g) => Ok(g.clone()),
            InitialField::Fock(..) | InitialField::Density(_) => Err(Error::Protocol(
                "number and density-matrix initial states need a Fock engine".into(),
            )),
        }
    }
}

fn thermal_density(s: SpaceDescriptor, n1: f64, n2: f64) -> Result<DensityMatrix> {
    if !(n1 >= 0.0 && n2 >= 0.0) {
        return Err(Error::InvalidParams(
            "thermal occupation must be >= 0".into(),
        ));
    }
    let weights = |n: f64, cut: usize| -> Vec<f64> {
        let q = n / (n + 1.0);
        (0..cut).map(|k| q.powi(k as i32)).collect()
    };
    let w1 = weights(n1, s.n1());
    let w2 = weights(n2, s.n2());
    let norm: f64 = w1.iter().sum::<f64>() * w2.iter().sum::<f64>();
    let mut m = ndarray::Array2::zeros((s.dim(), s.dim()));
    for (i, a) in w1.iter().enumerate() {
        for (j, b) in w2.iter().enumerate() {
            let k = s.index(0, i, j);
            m[[k, k]] = C64::from(a * b / norm);
        }
    }
    DensityMatrix::new(s, m)
}

fn step_samples(start: f64, duration: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|i| start + duration * i as f64 / count as f64)
        .collect()
}

/// Runs the steps in order on the engine chosen by `spec` and reports the
/// final state against the two-mode squeezed vacuum at the protocol's ε.
///
/// Regime violations are recorded as warnings in the trajectory
/// diagnostics rather than refused.
pub fn run_protocol(
    spec: &ProtocolSpec,
    initial: &InitialField,
) -> Result<(Trajectory, SqueezingReport)> {
    spec.validate()?;
    let total = spec.total_duration();
    let mut warnings = Vec::new();
    for (k, step) in spec.steps.iter().enumerate() {
        for w in validate_regime(&step.params, &step.derived, total).warnings() {
            warnings.push(format!("step {}: {w}", k + 1));
        }
    }
    let samples = spec.samples_per_step.max(1);
    let (mut traj, report) = match spec.engine {
        Engine::Gaussian => run_gaussian(spec, initial, samples)?,
        Engine::Fock | Engine::Collision => run_fock_like(spec, initial, samples)?,
    };
    if let Some(w) = report.leak_warning() {
        warnings.push(w);
    }
    for w in warnings {
        if !traj.diagnostics.warnings.contains(&w) {
            traj.diagnostics.warnings.push(w);
        }
    }
    Ok((traj, report))
}

fn run_gaussian(
    spec: &ProtocolSpec,
    initial: &InitialField,
    samples: usize,
) -> Result<(Trajectory, SqueezingReport)> {
    let eps = spec.epsilon();
    let mut state = initial.to_gaussian()?;
    let mut traj = Trajectory::new(FIELD_OBSERVABLES.iter().map(|s| s.to_string()).collect());
    traj.push(0.0, analysis::gaussian_observables(&state, eps));
    let mut t0 = 0.0;
    for step in &spec.steps {
        if step.duration == 0.0 {
            continue;
        }
        let which = step.channel().mode();
        let mut t_prev = t0;
        for t in step_samples(t0, step.duration, samples) {
            state =
                gaussian::gaussian_lindblad_evolve(&state, eps, step.gamma(), which, t - t_prev)?;
            traj.push(t, analysis::gaussian_observables(&state, eps));
            t_prev = t;
        }
        t0 += step.duration;
    }
    let report = SqueezingReport::from_gaussian(&state, eps)?;
    Ok((traj, report))
}

fn run_fock_like(
    spec: &ProtocolSpec,
    initial: &InitialField,
    samples: usize,
) -> Result<(Trajectory, SqueezingReport)> {
    let eps = spec.epsilon();
    let s = spec.field_space()?;
    model::check_squeeze_truncation(s, eps, model::SQUEEZE_TRUNCATION_LIMIT)?;
    let mut rho = initial.to_density(s)?;
    let probe = FieldProbe::new(s, eps)?;
    let mut traj = Trajectory::new(probe.names());
    traj.push(0.0, probe.record(&rho));
    traj.final_state = Some(rho.clone());
    let mut t0 = 0.0;
    for (k, step) in spec.steps.iter().enumerate() {
        if step.duration == 0.0 {
            continue;
        }
        let times = step_samples(t0, step.duration, samples);
        let part = match spec.engine {
            Engine::Fock => {
                let b = dynamics::b_mode_jump_operator(s, eps, step.channel().mode())?;
                let gamma = step.gamma();
                let dt = if gamma > 0.0 {
                    0.05 / gamma
                } else {
                    step.duration
                };
                dynamics::lindblad_evolve(
                    &rho,
                    None,
                    &[Jump::new(b, gamma)],
                    (t0, t0 + step.duration),
                    dt,
                    &times,
                    &probe,
                    LindbladOptions {
                        monitor_positivity: false,
                        abort_on_leak: false,
                    },
                )?
            }
            _ => {
                // Step k draws its ensemble from seeds (master ^ k << 32) ^ i.
                let arrivals = ArrivalProcess::new(
                    step.params.r_a,
                    spec.seed ^ ((k as u64) << 32),
                    spec.overlap_policy,
                )?;
                let local: Vec<f64> = times.iter().map(|t| t - t0).collect();
                let mut part = dynamics::run_collision_ensemble(
                    &rho,
                    &step.collision_spec(spec.include_stark),
                    step.duration,
                    &arrivals,
                    spec.trajectories,
                    &local,
                    &probe,
                )?;
                part.times = times.clone();
                part
            }
        };
        let peak = part.diagnostics.max_truncation_leak;
        if spec.engine == Engine::Fock && peak > dynamics::LEAK_LIMIT {
            traj.diagnostics.warnings.push(format!(
                "step {}: boundary Fock population peaked at {peak:.2e}",
                k + 1
            ));
        }
        rho = part
            .final_state
            .clone()
            .ok_or_else(|| Error::Protocol("engine returned no final state".into()))?;
        traj.extend(part);
        t0 += step.duration;
    }
    let leak = rho.truncation_leak();
    if leak > dynamics::LEAK_LIMIT {
        return Err(Error::TruncationOverflow { leak });
    }
    let report = SqueezingReport::from_fock(&rho, eps)?;
    traj.final_state = Some(rho);
    Ok((traj, report))
}
