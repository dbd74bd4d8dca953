//! Time evolution: unitary propagation, the Lindblad integrator for the
//! b-mode reservoir, and the stochastic atomic-beam collision model whose
//! coarse-grained limit that reservoir describes.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    matrix_exponential, partial_trace, AtomLevel, DensityMatrix, Operator, SpaceDescriptor,
    Subsystem,
};
use crate::linalg::{self, SparseRows, C64, I, ONE};
use crate::model::{self, DerivedParams, StarkShifts};

/// Hermiticity tolerance for Hamiltonians handed to the propagators.
const HAMILTONIAN_TOL: f64 = 1e-8;
const TRACE_DRIFT: f64 = 1e-8;
/// Boundary population above which Fock runs abort.
pub const LEAK_LIMIT: f64 = 1e-3;

/// One harmonic component `amplitude · e^{i frequency t} · op`.
#[derive(Clone, Debug)]
pub struct HarmonicTerm {
    pub op: Operator,
    pub amplitude: C64,
    pub frequency: f64,
}

impl HarmonicTerm {
    pub fn new(op: Operator, amplitude: C64, frequency: f64) -> Self {
        Self {
            op,
            amplitude,
            frequency,
        }
    }
}

/// `H(t) = Σ_k c_k e^{i ω_k t} O_k`; the caller supplies conjugate pairs.
#[derive(Clone, Debug)]
pub struct TimeDependentHamiltonian {
    space: SpaceDescriptor,
    terms: Vec<HarmonicTerm>,
}

impl TimeDependentHamiltonian {
    pub fn new(space: SpaceDescriptor, terms: Vec<HarmonicTerm>) -> Self {
        Self { space, terms }
    }

    pub fn constant(h: Operator) -> Self {
        let space = h.space();
        Self::new(space, vec![HarmonicTerm::new(h, ONE, 0.0)])
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    pub fn terms(&self) -> &[HarmonicTerm] {
        &self.terms
    }

    pub fn max_frequency(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.frequency.abs())
            .fold(0.0, f64::max)
    }

    pub fn at(&self, t: f64) -> Operator {
        let mut h = Operator::zeros(self.space);
        for term in &self.terms {
            let phase = C64::from_polar(1.0, term.frequency * t);
            h = &h + &term.op.scale(term.amplitude * phase);
        }
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Times the state was renormalized after trace drift above 1e-8.
    pub trace_renormalizations: usize,
    pub max_trace_drift: f64,
    /// Samples at which an eigenvalue fell below -1e-8.
    pub positivity_violations: usize,
    pub accepted_arrivals: usize,
    pub dropped_arrivals: usize,
    pub max_truncation_leak: f64,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    fn note_drift(&mut self, drift: f64) {
        self.max_trace_drift = self.max_trace_drift.max(drift.abs());
        if drift.abs() > TRACE_DRIFT {
            self.trace_renormalizations += 1;
        }
    }

    fn absorb(&mut self, other: &Diagnostics) {
        self.trace_renormalizations += other.trace_renormalizations;
        self.max_trace_drift = self.max_trace_drift.max(other.max_trace_drift);
        self.positivity_violations += other.positivity_violations;
        self.accepted_arrivals += other.accepted_arrivals;
        self.dropped_arrivals += other.dropped_arrivals;
        self.max_truncation_leak = self.max_truncation_leak.max(other.max_truncation_leak);
        for w in &other.warnings {
            if !self.warnings.contains(w) {
                self.warnings.push(w.clone());
            }
        }
    }
}

/// Sampled observables along an evolution.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    pub records: Vec<Vec<f64>>,
    pub final_state: Option<DensityMatrix>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn new(names: Vec<String>) -> Self {
        Self {
            names,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: f64, record: Vec<f64>) {
        assert_eq!(record.len(), self.names.len(), "record width");
        if let Some(&last) = self.times.last() {
            assert!(t > last, "sample times must increase ({t} after {last})");
        }
        self.times.push(t);
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.records.iter().map(|r| r[k]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.column(name)?.last().copied()
    }

    /// Appends `other`, dropping its leading samples that do not advance time.
    pub fn extend(&mut self, other: Trajectory) {
        assert_eq!(self.names, other.names, "observable keys differ");
        for (t, r) in other.times.into_iter().zip(other.records) {
            if self.times.last().is_none_or(|&last| t > last) {
                self.times.push(t);
                self.records.push(r);
            }
        }
        self.diagnostics.absorb(&other.diagnostics);
        if other.final_state.is_some() {
            self.final_state = other.final_state;
        }
    }

    /// CSV with header `t,<names>`, 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, rec) in self.times.iter().zip(&self.records) {
            write!(out, "{t:.16e}").unwrap();
            for v in rec {
                write!(out, ",{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Observables recorded along a trajectory. `moments` must be linear in
/// the state so that ensemble averages can be taken before `finish`.
pub trait Probe: Sync {
    fn names(&self) -> Vec<String>;
    fn moments(&self, rho: &DensityMatrix) -> Vec<f64>;
    fn finish(&self, moments: &[f64]) -> Vec<f64> {
        moments.to_vec()
    }
    fn record(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.finish(&self.moments(rho))
    }
}

/// Real parts of `<O_k>` for a list of named operators.
pub struct OperatorProbe {
    names: Vec<String>,
    ops: Vec<SparseRows>,
}

impl OperatorProbe {
    pub fn new(named: Vec<(String, Operator)>) -> Self {
        let (names, ops) = named.into_iter().map(|(n, o)| (n, o.sparse())).unzip();
        Self { names, ops }
    }
}

impl Probe for OperatorProbe {
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }
    fn moments(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.ops
            .iter()
            .map(|o| o.trace_with(&rho.matrix().view()).re)
            .collect()
    }
}

fn check_hamiltonian(h: &Operator) -> Result<()> {
    let dev = h.hermitian_deviation();
    if dev > HAMILTONIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    Ok(())
}

/// `ρ(t) = e^{-iHt} ρ0 e^{iHt}`.
pub fn evolve_time_independent(
    h: &Operator,
    rho0: &DensityMatrix,
    t: f64,
) -> Result<DensityMatrix> {
    rho0.space().ensure_same(&h.space())?;
    check_hamiltonian(h)?;
    if t == 0.0 {
        return Ok(rho0.clone());
    }
    let u = matrix_exponential(h, C64::new(0.0, -t))?;
    let mut rho = rho0.transformed(&u)?;
    let drift = rho.trace() - 1.0;
    if drift.abs() > TRACE_DRIFT {
        rho.renormalize();
    }
    Ok(rho)
}

/// `out += α M + (α M)†`.
fn add_with_adjoint(m: &Array2<C64>, alpha: C64, out: &mut Array2<C64>) {
    let n = m.nrows();
    let ms = m.as_slice().expect("standard layout");
    let os = out.as_slice_mut().expect("standard layout");
    for i in 0..n {
        let row = &mut os[i * n..(i + 1) * n];
        for (j, o) in row.iter_mut().enumerate() {
            *o += alpha * ms[i * n + j] + (alpha * ms[j * n + i]).conj();
        }
    }
}

fn rk4_step<F>(rho: &Array2<C64>, t: f64, h: f64, rhs: &F) -> Array2<C64>
where
    F: Fn(f64, &Array2<C64>) -> Array2<C64>,
{
    let hc = C64::from(h);
    let k1 = rhs(t, rho);
    let k2 = rhs(t + h / 2.0, &(rho + &(&k1 * (hc / 2.0))));
    let k3 = rhs(t + h / 2.0, &(rho + &(&k2 * (hc / 2.0))));
    let k4 = rhs(t + h, &(rho + &(&k3 * hc)));
    let mut out = rho.clone();
    out.scaled_add(hc / 6.0, &k1);
    out.scaled_add(hc / 3.0, &k2);
    out.scaled_add(hc / 3.0, &k3);
    out.scaled_add(hc / 6.0, &k4);
    out
}

/// Fourth-order Runge–Kutta propagation of the von Neumann equation under
/// a harmonic time-dependent Hamiltonian over `[t_span.0, t_span.1]`.
///
/// Requires `dt <= 0.05 / max|ω_k|` so the fastest phase is resolved.
pub fn evolve_time_dependent(
    h: &TimeDependentHamiltonian,
    rho0: &DensityMatrix,
    t_span: (f64, f64),
    dt: f64,
) -> Result<DensityMatrix> {
    rho0.space().ensure_same(&h.space())?;
    let (t0, t1) = t_span;
    if !(t1 >= t0) || !(dt > 0.0) {
        return Err(Error::Precondition("need t1 >= t0 and dt > 0".into()));
    }
    let wmax = h.max_frequency();
    if wmax > 0.0 && dt > 0.05 / wmax * (1.0 + 1e-12) {
        return Err(Error::StepSize {
            required: 0.05 / wmax,
            given: dt,
        });
    }
    for term in h.terms() {
        if !term
            .op
            .matrix()
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
        {
            return Err(Error::NonFinite("hamiltonian term"));
        }
    }
    check_hamiltonian(&h.at(t0))?;
    if t1 == t0 {
        return Ok(rho0.clone());
    }
    let sparse: Vec<(SparseRows, C64, f64)> = h
        .terms()
        .iter()
        .map(|t| (t.op.sparse(), t.amplitude, t.frequency))
        .collect();
    let rhs = |t: f64, rho: &Array2<C64>| {
        let mut m = Array2::zeros(rho.dim());
        for (op, amp, w) in &sparse {
            op.mul_dense_acc(rho, amp * C64::from_polar(1.0, w * t), &mut m);
        }
        let mut out = Array2::zeros(rho.dim());
        add_with_adjoint(&m, -I, &mut out);
        out
    };
    let steps = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    let step = (t1 - t0) / steps as f64;
    let mut rho = rho0.matrix().clone();
    for k in 0..steps {
        rho = rk4_step(&rho, t0 + k as f64 * step, step, &rhs);
    }
    let mut out = DensityMatrix::from_parts(rho0.space(), rho);
    if (out.trace() - 1.0).abs() > TRACE_DRIFT {
        out.renormalize();
    }
    Ok(out)
}

/// A dissipator `γ D[L]` with `D[L]ρ = LρL† − ½{L†L, ρ}`.
#[derive(Clone, Debug)]
pub struct Jump {
    pub op: Operator,
    pub rate: f64,
}

impl Jump {
    pub fn new(op: Operator, rate: f64) -> Self {
        Self { op, rate }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LindbladOptions {
    /// Check positivity (Cholesky) at every sample.
    pub monitor_positivity: bool,
    /// Abort with [`Error::TruncationOverflow`] when boundary population
    /// exceeds [`LEAK_LIMIT`].
    pub abort_on_leak: bool,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        Self {
            monitor_positivity: true,
            abort_on_leak: false,
        }
    }
}

struct SparseJump {
    l: SparseRows,
    ldl: SparseRows,
    rate: f64,
}

/// Integrates `dρ/dt = −i[H, ρ] + Σ_j γ_j (L_j ρ L_j† − ½{L_j†L_j, ρ})`
/// with fixed-step RK4 and records `probe` at each of `sample_times`.
///
/// The caller's `dt` must satisfy `dt · max(γ, ‖H‖) <= 0.05`; the
/// integrator further subdivides so that `dt · ‖generator‖ <= 1`, which
/// keeps RK4 stable for the stiff high-photon part of the truncated space.
pub fn lindblad_evolve(
    rho0: &DensityMatrix,
    hamiltonian: Option<&Operator>,
    jumps: &[Jump],
    t_span: (f64, f64),
    dt: f64,
    sample_times: &[f64],
    probe: &dyn Probe,
    options: LindbladOptions,
) -> Result<Trajectory> {
    let space = rho0.space();
    let (t0, t1) = t_span;
    if !(t1 >= t0) || !(dt > 0.0) {
        return Err(Error::Precondition("need t1 >= t0 and dt > 0".into()));
    }
    let mut scale = 0.0_f64;
    for j in jumps {
        space.ensure_same(&j.op.space())?;
        if !(j.rate >= 0.0) {
            return Err(Error::Precondition(format!("jump rate {} < 0", j.rate)));
        }
        scale = scale.max(j.rate);
    }
    let h_sparse = match hamiltonian {
        Some(h) => {
            space.ensure_same(&h.space())?;
            check_hamiltonian(h)?;
            scale = scale.max(h.norm_bound());
            Some(h.sparse())
        }
        None => None,
    };
    if scale > 0.0 && dt * scale > 0.05 * (1.0 + 1e-12) {
        return Err(Error::StepSize {
            required: 0.05 / scale,
            given: dt,
        });
    }
    let mut stiffness = hamiltonian.map_or(0.0, |h| 2.0 * h.norm_bound());
    let sjumps: Vec<SparseJump> = jumps
        .iter()
        .filter(|j| j.rate > 0.0)
        .map(|j| {
            let ldl = j.op.dagger().dot(&j.op);
            stiffness += j.rate * ldl.norm_bound();
            SparseJump {
                l: j.op.sparse(),
                ldl: ldl.sparse(),
                rate: j.rate,
            }
        })
        .collect();
    let step_cap = if stiffness > 0.0 {
        dt.min(1.0 / stiffness)
    } else {
        dt
    };

    let rhs = |_t: f64, rho: &Array2<C64>| {
        let n = rho.nrows();
        let mut out = Array2::zeros((n, n));
        if let Some(hs) = &h_sparse {
            let m = hs.mul_dense(rho);
            add_with_adjoint(&m, -I, &mut out);
        }
        for j in &sjumps {
            let m = j.ldl.mul_dense(rho);
            add_with_adjoint(&m, C64::from(-0.5 * j.rate), &mut out);
            // L ρ L† as the Hermitian part of L (L ρ)†. Every term is then
            // Hermitian to the last bit; the right-hand side is only a
            // Lindbladian on Hermitian ρ, and rounding noise in the
            // anti-Hermitian part would otherwise be amplified.
            let lr = j.l.mul_dense(rho);
            let z = j.l.mul_dense(&linalg::dagger(&lr.view()));
            add_with_adjoint(&z, C64::from(0.5 * j.rate), &mut out);
        }
        out
    };

    let mut traj = Trajectory::new(probe.names());
    let mut rho = rho0.matrix().clone();
    let mut t = t0;
    let mut samples: Vec<f64> = sample_times.to_vec();
    if samples.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(
            "sample times must be strictly increasing".into(),
        ));
    }
    if samples
        .iter()
        .any(|&s| s < t0 - 1e-15 || s > t1 * (1.0 + 1e-15) + 1e-300)
    {
        return Err(Error::Precondition(
            "sample times must lie in the span".into(),
        ));
    }
    if samples.last().is_none_or(|&s| s < t1) {
        samples.push(t1);
    }
    let mut recorded = 0usize;
    for (k, &ts) in samples.iter().enumerate() {
        let span = ts - t;
        if span > 0.0 {
            let steps = (span / step_cap).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for s in 0..steps {
                rho = rk4_step(&rho, t + s as f64 * h, h, &rhs);
            }
            t = ts;
        }
        let mut state = DensityMatrix::from_parts(space, rho.clone());
        let drift = state.trace() - 1.0;
        traj.diagnostics.note_drift(drift);
        if drift.abs() > TRACE_DRIFT {
            state.renormalize();
            rho = state.matrix().clone();
        }
        if options.monitor_positivity && !state.is_positive() {
            traj.diagnostics.positivity_violations += 1;
        }
        let leak = state.truncation_leak();
        traj.diagnostics.max_truncation_leak = traj.diagnostics.max_truncation_leak.max(leak);
        if options.abort_on_leak && leak > LEAK_LIMIT {
            return Err(Error::TruncationOverflow { leak });
        }
        let is_extra = k == samples.len() - 1 && samples.len() > sample_times.len();
        if !is_extra {
            traj.push(ts, probe.record(&state));
            recorded += 1;
        }
        if k == samples.len() - 1 {
            traj.final_state = Some(state);
        }
    }
    debug_assert_eq!(recorded, sample_times.len());
    if step_cap < dt {
        traj.diagnostics.warnings.push(format!(
            "step subdivided to {step_cap:.3e} for stability (requested {dt:.3e})"
        ));
    }
    Ok(traj)
}

/// `b_j = S12†(ε) a_j S12(ε)`, conjugated with the truncated squeeze
/// operator. On low Fock states this is `cosh ε a_j − sinh ε a_k†`; being
/// unitarily equivalent to `a_j` on the truncated space, it keeps the exact
/// dark states `S12†|0, m>` and `S12†|m, 0>` at any cutoff, which the
/// truncated closed form does not.
pub fn b_mode_jump_operator(s: SpaceDescriptor, epsilon: f64, which: usize) -> Result<Operator> {
    model::check_squeeze_truncation(s, epsilon, model::SQUEEZE_TRUNCATION_LIMIT)?;
    let sq = model::build_squeeze_operator(s, epsilon)?;
    let a = crate::hilbert::annihilation_op(s, which)?;
    Ok(sq.dagger().dot(&a).dot(&sq))
}

/// `S12† a_j S12` by the Hadamard expansion `Σ_k ad_{-ξ}^k(a_j) / k!`,
/// `ξ = ε (a1 a2 − a1† a2†)`, summed through `order` nested commutators.
///
/// Each commutator with the truncated generator moves the truncation edge
/// one level inward, so matrix elements with `n1, n2 ≤ N − 1 − order`
/// carry no truncation error; the remainder there is bounded by
/// `ε^(order+1) / (order+1)!` times the norm of the mode operator on the
/// block.
pub fn b_mode_by_commutator_series(
    s: SpaceDescriptor,
    epsilon: f64,
    which: usize,
    order: usize,
) -> Result<Operator> {
    let a1 = crate::hilbert::annihilation_op(s, 1)?;
    let a2 = crate::hilbert::annihilation_op(s, 2)?;
    let pair = a1.dot(&a2);
    let minus_xi = (&pair.dagger() - &pair).scale(epsilon);
    let mut term = crate::hilbert::annihilation_op(s, which)?;
    let mut sum = term.clone();
    for k in 1..=order {
        term = minus_xi.commutator(&term).scale(1.0 / k as f64);
        sum = &sum + &term;
    }
    Ok(sum)
}

/// Single collision: `Tr_atom[U (|atom><atom| ⊗ ρ_c) U†]`, `U = e^{-i H τ}`.
pub fn collision_step(
    rho_c: &DensityMatrix,
    atom_init: AtomLevel,
    h_int: &Operator,
    tau: f64,
) -> Result<DensityMatrix> {
    let hs = h_int.space();
    if !rho_c.space().is_field_only() || hs.field_part() != rho_c.space() {
        return Err(Error::SpaceMismatch {
            left: rho_c.space().as_array(),
            right: hs.as_array(),
        });
    }
    hs.check_level(atom_init)?;
    if tau == 0.0 {
        return Ok(rho_c.clone());
    }
    let joint = DensityMatrix::with_atom(rho_c, atom_init, hs.atom_levels())?;
    let evolved = evolve_time_independent(h_int, &joint, tau)?;
    partial_trace(&evolved, &[Subsystem::Mode1, Subsystem::Mode2])
}

/// The collision map in Kraus form, `ρ ↦ Σ_k K_k ρ K_k†` with
/// `K_k = <k| e^{-iHτ} |atom>`.
#[derive(Clone, Debug)]
pub struct CollisionChannel {
    field: SpaceDescriptor,
    kraus: Vec<SparseRows>,
    tau: f64,
}

impl CollisionChannel {
    pub fn new(h_int: &Operator, atom_init: AtomLevel, tau: f64) -> Result<Self> {
        let s = h_int.space();
        s.check_level(atom_init)?;
        check_hamiltonian(h_int)?;
        let u = matrix_exponential(h_int, C64::new(0.0, -tau))?;
        let f = s.field_dim();
        let a = atom_init.index();
        let kraus = (0..s.atom_levels())
            .map(|k| {
                let block = u
                    .matrix()
                    .slice(ndarray::s![k * f..(k + 1) * f, a * f..(a + 1) * f]);
                SparseRows::from_dense(&block)
            })
            .filter(|k| k.nnz() > 0)
            .collect();
        Ok(Self {
            field: s.field_part(),
            kraus,
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        assert_eq!(rho.space(), self.field);
        let n = self.field.dim();
        let mut out = Array2::zeros((n, n));
        for k in &self.kraus {
            let kr = k.mul_dense(rho.matrix());
            let kr_dag = linalg::dagger(&kr.view());
            k.mul_dense_acc(&kr_dag, ONE, &mut out);
        }
        // Hermitian part, exact to the last bit.
        let mut sym = Array2::zeros((n, n));
        add_with_adjoint(&out, C64::from(0.5), &mut sym);
        DensityMatrix::from_parts(self.field, sym)
    }
}

/// Rule for atoms that arrive while another atom is still inside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OverlapPolicy {
    /// Discard the late atom (thinned Poisson process).
    #[default]
    Drop,
    /// Hold the late atom until the cavity is free.
    Defer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalProcess {
    pub rate: f64,
    pub seed: u64,
    pub policy: OverlapPolicy,
}

/// Collision start times over one run plus the overlap bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArrivalSchedule {
    pub starts: Vec<f64>,
    pub dropped: usize,
}

impl ArrivalProcess {
    pub fn new(rate: f64, seed: u64, policy: OverlapPolicy) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Precondition(format!(
                "arrival rate {rate} must be finite and >= 0"
            )));
        }
        Ok(Self { rate, seed, policy })
    }

    /// Seed of ensemble member `i`: `master ⊕ i`.
    pub fn member(&self, i: u64) -> Self {
        Self {
            seed: self.seed ^ i,
            ..*self
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Raw exponential inter-arrival gaps.
    pub fn inter_arrival_samples(&self, n: usize) -> Vec<f64> {
        if self.rate == 0.0 {
            return vec![f64::INFINITY; n];
        }
        let exp = Exp::new(self.rate).expect("positive rate");
        let mut rng = self.rng();
        (0..n).map(|_| exp.sample(&mut rng)).collect()
    }

    /// Collision start times in `[0, duration)` for interaction time `tau`.
    pub fn schedule(&self, duration: f64, tau: f64) -> ArrivalSchedule {
        let mut out = ArrivalSchedule::default();
        if self.rate == 0.0 {
            return out;
        }
        let exp = Exp::new(self.rate).expect("positive rate");
        let mut rng = self.rng();
        let mut t = 0.0;
        let mut busy_until = f64::NEG_INFINITY;
        loop {
            t += exp.sample(&mut rng);
            if t >= duration {
                break;
            }
            match self.policy {
                OverlapPolicy::Drop => {
                    if t < busy_until {
                        out.dropped += 1;
                    } else {
                        out.starts.push(t);
                        busy_until = t + tau;
                    }
                }
                OverlapPolicy::Defer => {
                    let start = t.max(busy_until);
                    if start >= duration {
                        out.dropped += 1;
                        continue;
                    }
                    out.starts.push(start);
                    busy_until = start + tau;
                }
            }
        }
        out
    }
}

/// What one beam atom does to the cavity: the selective Hamiltonian of a
/// channel, the injection level and the interaction time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionSpec {
    pub derived: DerivedParams,
    /// Stark shifts included in the interaction; `StarkShifts::zero()`
    /// evolves in the interaction picture of H0.
    pub stark: StarkShifts,
    pub atom: AtomLevel,
    pub tau: f64,
}

impl CollisionSpec {
    pub fn hamiltonian(&self, field: SpaceDescriptor) -> Result<Operator> {
        model::build_selective_hamiltonian(&self.derived, &self.stark, field.with_atom(2)?)
    }

    pub fn channel(&self, field: SpaceDescriptor) -> Result<CollisionChannel> {
        CollisionChannel::new(&self.hamiltonian(field)?, self.atom, self.tau)
    }
}

fn check_collision_regime(spec: &CollisionSpec, rate: f64, diag: &mut Diagnostics) -> Result<()> {
    let coupling = spec.derived.theta_b * spec.tau;
    if coupling >= 0.5 {
        return Err(Error::Precondition(format!(
            "theta_b * tau = {coupling:.3} must be < 0.5"
        )));
    }
    if coupling > 0.2 {
        diag.warnings.push(format!(
            "theta_b * tau = {coupling:.3} exceeds the weak-coupling bound 0.2"
        ));
    }
    if rate * spec.tau > 0.2 {
        return Err(Error::Precondition(format!(
            "r_a * tau = {:.3} must be <= 0.2 (one atom at a time)",
            rate * spec.tau
        )));
    }
    Ok(())
}

struct RawRun {
    moments: Vec<Vec<f64>>,
    final_state: DensityMatrix,
    diagnostics: Diagnostics,
}

fn collision_run(
    rho0: &DensityMatrix,
    channel: &CollisionChannel,
    duration: f64,
    arrivals: &ArrivalProcess,
    sample_times: &[f64],
    probe: &dyn Probe,
) -> Result<RawRun> {
    let schedule = arrivals.schedule(duration, channel.tau());
    let mut diag = Diagnostics {
        accepted_arrivals: schedule.starts.len(),
        dropped_arrivals: schedule.dropped,
        ..Default::default()
    };
    let mut rho = rho0.clone();
    let mut next = schedule.starts.iter().map(|s| s + channel.tau()).peekable();
    let mut moments = Vec::with_capacity(sample_times.len());
    let settle = |rho: &mut DensityMatrix, diag: &mut Diagnostics| -> Result<()> {
        let drift = rho.trace() - 1.0;
        diag.note_drift(drift);
        if drift.abs() > TRACE_DRIFT {
            rho.renormalize();
        }
        let leak = rho.truncation_leak();
        diag.max_truncation_leak = diag.max_truncation_leak.max(leak);
        if leak > LEAK_LIMIT {
            return Err(Error::TruncationOverflow { leak });
        }
        Ok(())
    };
    for &ts in sample_times {
        while let Some(&done) = next.peek() {
            if done > ts {
                break;
            }
            rho = channel.apply(&rho);
            next.next();
        }
        settle(&mut rho, &mut diag)?;
        moments.push(probe.moments(&rho));
    }
    for _ in next {
        rho = channel.apply(&rho);
    }
    settle(&mut rho, &mut diag)?;
    Ok(RawRun {
        moments,
        final_state: rho,
        diagnostics: diag,
    })
}

/// One stochastic realization of the beam: Poisson arrivals, one collision
/// per accepted atom, observables at `sample_times` (collisions count once
/// complete, at start + τ). Deterministic for a fixed seed.
pub fn run_collision_model(
    rho0: &DensityMatrix,
    spec: &CollisionSpec,
    duration: f64,
    arrivals: &ArrivalProcess,
    sample_times: &[f64],
    probe: &dyn Probe,
) -> Result<Trajectory> {
    run_collision_ensemble(rho0, spec, duration, arrivals, 1, sample_times, probe)
}

/// Trajectories processed per parallel batch. Fixed so that the ordered
/// summation, and hence every bit of the result, does not depend on the
/// worker count.
const ENSEMBLE_BATCH: usize = 8;

/// Average of `members` realizations with seeds `master ⊕ i`. Moments and
/// final states are averaged before nonlinear observables are formed.
pub fn run_collision_ensemble(
    rho0: &DensityMatrix,
    spec: &CollisionSpec,
    duration: f64,
    arrivals: &ArrivalProcess,
    members: usize,
    sample_times: &[f64],
    probe: &dyn Probe,
) -> Result<Trajectory> {
    if !rho0.space().is_field_only() {
        return Err(Error::InvalidSpace(
            "collision model evolves a field-only state".into(),
        ));
    }
    if members == 0 {
        return Err(Error::Precondition(
            "ensemble needs at least one member".into(),
        ));
    }
    if sample_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition(
            "sample times must be strictly increasing".into(),
        ));
    }
    let mut diag = Diagnostics::default();
    check_collision_regime(spec, arrivals.rate, &mut diag)?;
    let channel = spec.channel(rho0.space())?;

    let width = probe.moments(rho0).len();
    let mut sums = vec![vec![0.0; width]; sample_times.len()];
    let n = rho0.space().dim();
    let mut state_sum = Array2::<C64>::zeros((n, n));
    let ids: Vec<u64> = (0..members as u64).collect();
    for batch in ids.chunks(ENSEMBLE_BATCH) {
        let runs: Vec<Result<RawRun>> = batch
            .par_iter()
            .map(|&i| {
                collision_run(
                    rho0,
                    &channel,
                    duration,
                    &arrivals.member(i),
                    sample_times,
                    probe,
                )
            })
            .collect();
        for run in runs {
            let run = run?;
            for (acc, m) in sums.iter_mut().zip(&run.moments) {
                for (a, v) in acc.iter_mut().zip(m) {
                    *a += v;
                }
            }
            state_sum += run.final_state.matrix();
            diag.absorb(&run.diagnostics);
        }
    }
    let inv = 1.0 / members as f64;
    let mut traj = Trajectory::new(probe.names());
    for (t, acc) in sample_times.iter().zip(sums) {
        let mean: Vec<f64> = acc.iter().map(|v| v * inv).collect();
        traj.push(*t, probe.finish(&mean));
    }
    traj.final_state = Some(DensityMatrix::from_parts(
        rho0.space(),
        state_sum.mapv(|z| z * inv),
    ));
    traj.diagnostics = diag;
    Ok(traj)
}
