//! Physical parameters and the Hamiltonians built from them: the full
//! three-level interaction, the effective two-channel Raman Hamiltonian,
//! its selective (single b-mode) forms, and the squeeze and displacement
//! unitaries.
//!
//! Frequencies are angular (rad/s) everywhere in this module. Parameter
//! files carry linear frequencies in Hz and are converted on load.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{HarmonicTerm, TimeDependentHamiltonian};
use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation_op, atom_transition_op, creation_op, matrix_exponential, AtomLevel, Operator,
    SpaceDescriptor,
};
use crate::linalg::C64;

/// Dispersive-regime threshold recorded by [`PhysicalParams::is_dispersive`].
pub const DISPERSIVE_LIMIT: f64 = 0.1;

/// Tail mass of the two-mode squeezed vacuum beyond which an operator
/// construction is refused.
pub const SQUEEZE_TRUNCATION_LIMIT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub omega1: f64,
    pub omega2: f64,
    pub g1: f64,
    pub g2: f64,
    /// Signed detunings.
    pub delta1: f64,
    pub delta2: f64,
    /// Excited-state spontaneous rate.
    pub gamma_e: f64,
    /// Atomic arrival rate (1/s).
    pub r_a: f64,
    /// Single-atom interaction time (s).
    pub tau: f64,
}

impl PhysicalParams {
    pub fn new(
        omega1: f64,
        omega2: f64,
        g1: f64,
        g2: f64,
        delta1: f64,
        delta2: f64,
        gamma_e: f64,
        r_a: f64,
        tau: f64,
    ) -> Result<Self> {
        let p = Self {
            omega1,
            omega2,
            g1,
            g2,
            delta1,
            delta2,
            gamma_e,
            r_a,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("g1", self.g1),
            ("g2", self.g2),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("gamma_e", self.gamma_e),
            ("r_a", self.r_a),
            ("tau", self.tau),
        ];
        for (name, v) in named {
            if !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} must be finite")));
            }
        }
        if self.delta1 == 0.0 {
            return Err(Error::InvalidParams("delta1 must be nonzero".into()));
        }
        if self.delta2 == 0.0 {
            return Err(Error::InvalidParams("delta2 must be nonzero".into()));
        }
        if self.delta1 == self.delta2 {
            return Err(Error::InvalidParams(
                "delta1 and delta2 must differ (dispersive ratio is infinite)".into(),
            ));
        }
        for (name, v) in [
            ("gamma_e", self.gamma_e),
            ("r_a", self.r_a),
            ("tau", self.tau),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    /// max(|Ω1|,|Ω2|,|g1|,|g2|) / min(|Δ1|,|Δ2|,|Δ1-Δ2|)
    pub fn dispersive_ratio(&self) -> f64 {
        let strong = [self.omega1, self.omega2, self.g1, self.g2]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let gap = [self.delta1, self.delta2, self.delta1 - self.delta2]
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        strong / gap
    }

    pub fn is_dispersive(&self) -> bool {
        self.dispersive_ratio() <= DISPERSIVE_LIMIT
    }

    /// Two-photon Rabi amplitudes Ω̃_i = Ω_i g_i.
    pub fn omega_tilde(&self) -> (f64, f64) {
        (self.omega1 * self.g1, self.omega2 * self.g2)
    }

    /// Multiplies every drive, coupling and detuning by `lambda`.
    pub fn scale_frequencies(&self, lambda: f64) -> Self {
        Self {
            omega1: self.omega1 * lambda,
            omega2: self.omega2 * lambda,
            g1: self.g1 * lambda,
            g2: self.g2 * lambda,
            delta1: self.delta1 * lambda,
            delta2: self.delta2 * lambda,
            ..*self
        }
    }

    /// Expresses every rate in units of `unit` (rad/s) and times in units of
    /// `1/unit`.
    pub fn in_units_of(&self, unit: f64) -> Self {
        Self {
            omega1: self.omega1 / unit,
            omega2: self.omega2 / unit,
            g1: self.g1 / unit,
            g2: self.g2 / unit,
            delta1: self.delta1 / unit,
            delta2: self.delta2 / unit,
            gamma_e: self.gamma_e / unit,
            r_a: self.r_a / unit,
            tau: self.tau * unit,
        }
    }

    /// Same parameters with both detunings negated.
    pub fn with_negated_detunings(&self) -> Self {
        Self {
            delta1: -self.delta1,
            delta2: -self.delta2,
            ..*self
        }
    }
}

/// Parameter file layout: linear frequencies in Hz, `tau_s` in seconds.
/// `r_a_hz` is an arrival rate (atoms per second) and is not multiplied by
/// 2π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub omega1_hz: f64,
    pub omega2_hz: f64,
    pub g1_hz: f64,
    pub g2_hz: f64,
    pub delta1_hz: f64,
    pub delta2_hz: f64,
    pub gamma_e_hz: f64,
    pub r_a_hz: f64,
    pub tau_s: f64,
}

impl ParamFile {
    pub const KEYS: [&'static str; 9] = [
        "omega1_hz",
        "omega2_hz",
        "g1_hz",
        "g2_hz",
        "delta1_hz",
        "delta2_hz",
        "gamma_e_hz",
        "r_a_hz",
        "tau_s",
    ];

    pub fn to_params(&self) -> Result<PhysicalParams> {
        let w = 2.0 * PI;
        PhysicalParams::new(
            w * self.omega1_hz,
            w * self.omega2_hz,
            w * self.g1_hz,
            w * self.g2_hz,
            w * self.delta1_hz,
            w * self.delta2_hz,
            w * self.gamma_e_hz,
            self.r_a_hz,
            self.tau_s,
        )
    }

    pub fn from_params(p: &PhysicalParams) -> Self {
        let w = 2.0 * PI;
        Self {
            omega1_hz: p.omega1 / w,
            omega2_hz: p.omega2 / w,
            g1_hz: p.g1 / w,
            g2_hz: p.g2 / w,
            delta1_hz: p.delta1 / w,
            delta2_hz: p.delta2 / w,
            gamma_e_hz: p.gamma_e / w,
            r_a_hz: p.r_a,
            tau_s: p.tau,
        }
    }
}

/// Which b-mode the effective two-level atom couples to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Θ1 > Θ2: atoms enter in `g` and absorb excitations of b̂1.
    #[serde(rename = "b1")]
    B1,
    /// Θ1 < Θ2: atoms enter in `h` and absorb excitations of b̂2.
    #[serde(rename = "b2")]
    B2,
}

impl Channel {
    pub fn mode(self) -> usize {
        match self {
            Channel::B1 => 1,
            Channel::B2 => 2,
        }
    }

    /// Injection state whose product with the b-vacuum is dark.
    pub fn atom_state(self) -> AtomLevel {
        match self {
            Channel::B1 => AtomLevel::G,
            Channel::B2 => AtomLevel::H,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub theta1: f64,
    pub theta2: f64,
    pub r: f64,
    pub epsilon: f64,
    pub theta_b: f64,
    pub gamma: f64,
    pub channel: Channel,
}

pub fn derive_rates(p: &PhysicalParams) -> Result<DerivedParams> {
    p.validate()?;
    let theta1 = (p.omega1 * p.g1 / p.delta1).abs();
    let theta2 = (p.omega2 * p.g2 / p.delta2).abs();
    if theta1 == theta2 {
        return Err(Error::DegenerateChannel);
    }
    let (channel, r) = if theta1 > theta2 {
        (Channel::B1, theta2 / theta1)
    } else {
        (Channel::B2, theta1 / theta2)
    };
    let theta_b = (theta1 + theta2) * ((1.0 - r) / (1.0 + r)).sqrt();
    Ok(DerivedParams {
        theta1,
        theta2,
        r,
        epsilon: r.atanh(),
        theta_b,
        gamma: p.r_a * theta_b * theta_b * p.tau * p.tau,
        channel,
    })
}

fn sigma(s: SpaceDescriptor, j: AtomLevel, m: AtomLevel) -> Result<Operator> {
    atom_transition_op(s, j, m)
}

fn require_levels(s: SpaceDescriptor, levels: usize) -> Result<()> {
    if s.atom_levels() < levels {
        return Err(Error::InvalidSpace(format!(
            "need at least {levels} atomic levels, space is {s}"
        )));
    }
    Ok(())
}

/// Harmonic decomposition of the full interaction-picture Hamiltonian
/// `Ω1 σ_eh e^{iΔ1 t} + Ω2 σ_eg e^{iΔ2 t} + g1 a1 σ_eg e^{iΔ1 t}
///  + g2 a2 σ_eh e^{iΔ2 t} + h.c.`
pub fn full_hamiltonian_terms(
    p: &PhysicalParams,
    s: SpaceDescriptor,
) -> Result<TimeDependentHamiltonian> {
    require_levels(s, 3)?;
    use AtomLevel::{E, G, H};
    let a1 = annihilation_op(s, 1)?;
    let a2 = annihilation_op(s, 2)?;
    let raising = [
        (sigma(s, E, H)?, p.omega1, p.delta1),
        (sigma(s, E, G)?, p.omega2, p.delta2),
        (a1.dot(&sigma(s, E, G)?), p.g1, p.delta1),
        (a2.dot(&sigma(s, E, H)?), p.g2, p.delta2),
    ];
    let mut terms = Vec::with_capacity(8);
    for (op, amp, freq) in raising {
        let lowering = op.dagger();
        terms.push(HarmonicTerm::new(op, C64::from(amp), freq));
        terms.push(HarmonicTerm::new(lowering, C64::from(amp), -freq));
    }
    Ok(TimeDependentHamiltonian::new(s, terms))
}

pub fn build_full_hamiltonian(p: &PhysicalParams, s: SpaceDescriptor, t: f64) -> Result<Operator> {
    Ok(full_hamiltonian_terms(p, s)?.at(t))
}

/// The effective two-channel Raman Hamiltonian after eliminating `e`
/// (real couplings, signed detunings).
pub fn build_effective_hamiltonian(p: &PhysicalParams, s: SpaceDescriptor) -> Result<Operator> {
    require_levels(s, 2)?;
    use AtomLevel::{G, H};
    let a1 = annihilation_op(s, 1)?;
    let a2 = annihilation_op(s, 2)?;
    let ad1 = a1.dagger();
    let ad2 = a2.dagger();
    let n1 = ad1.dot(&a1);
    let n2 = ad2.dot(&a2);
    let id = Operator::identity(s);
    let hh = sigma(s, H, H)?;
    let gg = sigma(s, G, G)?;
    let gh = sigma(s, G, H)?;
    let hg = sigma(s, H, G)?;

    let shift_h = &id.scale(p.omega1.powi(2) / p.delta1) + &n2.scale(p.g2.powi(2) / p.delta2);
    let shift_g = &id.scale(p.omega2.powi(2) / p.delta2) + &n1.scale(p.g1.powi(2) / p.delta1);
    let to_g = &ad1.scale(p.omega1 * p.g1 / p.delta1) + &a2.scale(p.omega2 * p.g2 / p.delta2);
    let to_h = &a1.scale(p.omega1 * p.g1 / p.delta1) + &ad2.scale(p.omega2 * p.g2 / p.delta2);
    let h = &(&shift_h.dot(&hh) + &shift_g.dot(&gg)) + &(&to_g.dot(&gh) + &to_h.dot(&hg));
    Ok(h)
}

/// Coefficients of the Stark-shift part H0 written with moduli:
/// `(hh_photon n_2 + hh_const) σ_hh + (gg_const + gg_photon n_1) σ_gg`,
/// where `n_j` is a number operator in whichever basis the caller uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarkShifts {
    pub hh_photon: f64,
    pub hh_const: f64,
    pub gg_const: f64,
    pub gg_photon: f64,
}

impl StarkShifts {
    pub fn from_params(p: &PhysicalParams) -> Self {
        Self {
            hh_photon: (p.g2 * p.g2 / p.delta2).abs(),
            hh_const: -(p.omega1 * p.omega1 / p.delta1).abs(),
            gg_const: (p.omega2 * p.omega2 / p.delta2).abs(),
            gg_photon: -(p.g1 * p.g1 / p.delta1).abs(),
        }
    }

    pub fn zero() -> Self {
        Self {
            hh_photon: 0.0,
            hh_const: 0.0,
            gg_const: 0.0,
            gg_photon: 0.0,
        }
    }

    fn operator(&self, s: SpaceDescriptor, num1: &Operator, num2: &Operator) -> Result<Operator> {
        use AtomLevel::{G, H};
        let id = Operator::identity(s);
        let on_h = &num2.scale(self.hh_photon) + &id.scale(self.hh_const);
        let on_g = &id.scale(self.gg_const) + &num1.scale(self.gg_photon);
        Ok(&on_h.dot(&sigma(s, H, H)?) + &on_g.dot(&sigma(s, G, G)?))
    }
}

/// `H0 + (Θ2 a2† − Θ1 a1) σ_hg + h.c.` with the moduli form of H0 in the
/// bare-mode number operators.
pub fn build_rewritten_hamiltonian(p: &PhysicalParams, s: SpaceDescriptor) -> Result<Operator> {
    require_levels(s, 2)?;
    let d = rates_unchecked(p);
    let a1 = annihilation_op(s, 1)?;
    let a2 = annihilation_op(s, 2)?;
    let h0 =
        StarkShifts::from_params(p).operator(s, &a1.dagger().dot(&a1), &a2.dagger().dot(&a2))?;
    let coupling = &a2.dagger().scale(d.0) - &a1.scale(d.1);
    let hg = sigma(s, AtomLevel::H, AtomLevel::G)?.dot(&coupling);
    Ok(&h0 + &(&hg + &hg.dagger()))
}

// (Θ2, Θ1) without the degeneracy check
fn rates_unchecked(p: &PhysicalParams) -> (f64, f64) {
    (
        (p.omega2 * p.g2 / p.delta2).abs(),
        (p.omega1 * p.g1 / p.delta1).abs(),
    )
}

/// Tail mass `tanh(ε)^{2N}` of the two-mode squeezed vacuum beyond the
/// smaller of the two truncations.
pub fn squeeze_tail(s: SpaceDescriptor, epsilon: f64) -> f64 {
    let n = s.n1().min(s.n2()) as i32;
    epsilon.tanh().abs().powi(2 * n)
}

/// Smallest truncation with TMSV tail mass below `tol`.
pub fn required_truncation(epsilon: f64, tol: f64) -> usize {
    let t = epsilon.tanh().abs();
    if t == 0.0 {
        return 1;
    }
    ((tol.ln() / (2.0 * t.ln())).ceil() as usize).max(1)
}

pub(crate) fn check_squeeze_truncation(s: SpaceDescriptor, epsilon: f64, tol: f64) -> Result<()> {
    let tail = squeeze_tail(s, epsilon);
    if tail > tol {
        return Err(Error::Truncation {
            required: required_truncation(epsilon, 1e-6),
            reason: format!("squeezed-vacuum tail {tail:.3e} exceeds {tol:e} at epsilon {epsilon}"),
        });
    }
    Ok(())
}

/// `S12(ε) = exp(ε a1 a2 − ε a1† a2†)` for real ε.
pub fn build_squeeze_operator(s: SpaceDescriptor, epsilon: f64) -> Result<Operator> {
    if !epsilon.is_finite() {
        return Err(Error::NonFinite("epsilon"));
    }
    check_squeeze_truncation(s, epsilon, SQUEEZE_TRUNCATION_LIMIT)?;
    let a1 = annihilation_op(s, 1)?;
    let a2 = annihilation_op(s, 2)?;
    let pair = a1.dot(&a2);
    let generator = &pair - &pair.dagger();
    matrix_exponential(&generator, C64::from(epsilon))
}

/// Closed-form Bogoliubov mode `b_j = cosh ε a_j − sinh ε a_k†` (k ≠ j) on
/// the truncated space. The truncated squeezed vacuum is an exact kernel
/// vector of both modes.
pub fn bogoliubov_mode(s: SpaceDescriptor, epsilon: f64, which: usize) -> Result<Operator> {
    let other = match which {
        1 => 2,
        2 => 1,
        m => return Err(Error::InvalidMode(m)),
    };
    let a = annihilation_op(s, which)?;
    let ad_other = creation_op(s, other)?;
    Ok(&a.scale(epsilon.cosh()) - &ad_other.scale(epsilon.sinh()))
}

/// `H0 + H1` with H1 = −Θ_b (b1 σ_hg + h.c.) for channel b1 and
/// H1 = Θ_b (b2† σ_hg + h.c.) for channel b2. Pass [`StarkShifts::zero`] to
/// keep only the dissipative coupling.
pub fn build_selective_hamiltonian(
    d: &DerivedParams,
    stark: &StarkShifts,
    s: SpaceDescriptor,
) -> Result<Operator> {
    require_levels(s, 2)?;
    if !(d.r < 1.0) {
        return Err(Error::DegenerateChannel);
    }
    let b1 = bogoliubov_mode(s, d.epsilon, 1)?;
    let b2 = bogoliubov_mode(s, d.epsilon, 2)?;
    let h0 = stark.operator(s, &b1.dagger().dot(&b1), &b2.dagger().dot(&b2))?;
    let hg = sigma(s, AtomLevel::H, AtomLevel::G)?;
    let half = match d.channel {
        Channel::B1 => b1.dot(&hg).scale(-d.theta_b),
        Channel::B2 => b2.dagger().dot(&hg).scale(d.theta_b),
    };
    Ok(&h0 + &(&half + &half.dagger()))
}

/// Whether |α_i|² stays below a quarter of the mode truncation.
pub fn displacement_within_truncation(s: SpaceDescriptor, alpha1: C64, alpha2: C64) -> bool {
    alpha1.norm_sqr() <= s.n1() as f64 / 4.0 && alpha2.norm_sqr() <= s.n2() as f64 / 4.0
}

/// `D1(α1) D2(α2)` with `D_i(α) = exp(α a_i† − α* a_i)`.
pub fn build_displacement_operator(
    s: SpaceDescriptor,
    alpha1: C64,
    alpha2: C64,
) -> Result<Operator> {
    for a in [alpha1, alpha2] {
        if !a.re.is_finite() || !a.im.is_finite() {
            return Err(Error::NonFinite("displacement amplitude"));
        }
    }
    let a1 = annihilation_op(s, 1)?;
    let a2 = annihilation_op(s, 2)?;
    let gen = |a: &Operator, alpha: C64| &a.dagger().scale(alpha) - &a.scale(alpha.conj());
    let d1 = matrix_exponential(&gen(&a1, alpha1), C64::from(1.0))?;
    let d2 = matrix_exponential(&gen(&a2, alpha2), C64::from(1.0))?;
    Ok(d1.dot(&d2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    /// Estimated population of `e`, |Ω1/Δ1|².
    pub excited_occupation: f64,
    /// Γe = |Ω1/Δ1|² γe.
    pub rate: f64,
}

pub fn spontaneous_decay_estimate(p: &PhysicalParams) -> DecayEstimate {
    let occ = (p.omega1 / p.delta1).powi(2);
    DecayEstimate {
        excited_occupation: occ,
        rate: occ * p.gamma_e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::StateVector;
    use proptest::prelude::*;

    const KHZ: f64 = 2.0 * PI * 1e3;

    /// Experimental set: g = 50 kHz, Ω1 = 40 kHz, Ω2 = Ω1/0.48,
    /// |Δ1| = 1 MHz, |Δ2| = 2|Δ1|.
    fn lab() -> PhysicalParams {
        PhysicalParams::new(
            40.0 * KHZ,
            40.0 / 0.48 * KHZ,
            50.0 * KHZ,
            50.0 * KHZ,
            -1000.0 * KHZ,
            2000.0 * KHZ,
            0.0,
            0.0,
            0.0,
        )
        .unwrap()
    }

    fn sp(a: usize, n1: usize, n2: usize) -> SpaceDescriptor {
        SpaceDescriptor::new(a, n1, n2).unwrap()
    }

    #[test]
    fn raman_rates_from_lab_parameters() {
        let d = derive_rates(&lab()).unwrap();
        assert!((d.theta1 / KHZ - 2.0).abs() < 1e-12);
        // 83.333 kHz * 50 kHz / 2 MHz
        assert!((d.theta2 / KHZ - 2.0833333333333335).abs() < 1e-12);
        assert_eq!(d.channel, Channel::B2);
        assert!((d.r - 0.96).abs() < 1e-12);
    }

    #[test]
    fn weak_channel_limit() {
        let mut p = lab();
        let d0 = derive_rates(&p).unwrap();
        p.omega1 *= 1e-6 * d0.theta2 / d0.theta1;
        let d = derive_rates(&p).unwrap();
        assert!((d.r / 1e-6 - 1.0).abs() < 1e-9);
        assert!((d.epsilon / 1e-6 - 1.0).abs() < 1e-9);
        assert!((d.theta_b / d.theta2 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn degenerate_and_invalid_parameters() {
        let mut p = lab();
        p.omega2 = p.omega1 * 2.0;
        assert_eq!(derive_rates(&p), Err(Error::DegenerateChannel));
        let mut q = lab();
        q.delta1 = 0.0;
        assert_eq!(
            q.validate(),
            Err(Error::InvalidParams("delta1 must be nonzero".into()))
        );
    }

    #[test]
    fn derived_invariants() {
        let d = derive_rates(&lab()).unwrap();
        let r = d.theta1.min(d.theta2) / d.theta1.max(d.theta2);
        assert_eq!(d.r, r);
        let tb = (d.theta1 + d.theta2) * ((1.0 - r) / (1.0 + r)).sqrt();
        assert!((d.theta_b - tb).abs() < 1e-9);
        // Θ_b equals the stronger rate times sqrt(1 - r²)
        assert!((d.theta_b - d.theta2 * (1.0 - r * r).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn full_hamiltonian_matrix_elements() {
        let p = PhysicalParams::new(1.0, 2.0, 3.0, 4.0, 50.0, -80.0, 0.0, 0.0, 0.0).unwrap();
        let s = sp(3, 3, 3);
        let h = build_full_hamiltonian(&p, s, 0.0).unwrap();
        assert!(h.hermitian_deviation() < 1e-12);
        assert!(h.matrix().iter().all(|z| z.im == 0.0));
        let e00 = s.index(2, 0, 0);
        assert_eq!(h.get(e00, s.index(1, 0, 0)).re, 1.0);
        assert_eq!(h.get(e00, s.index(0, 1, 0)).re, 3.0);
        let ht = build_full_hamiltonian(&p, s, 0.37).unwrap();
        assert!(ht.hermitian_deviation() < 1e-12);
        let zero = PhysicalParams::new(0.0, 0.0, 0.0, 0.0, 5.0, 7.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(
            build_full_hamiltonian(&zero, s, 1.0).unwrap().max_abs(),
            0.0
        );
        assert!(build_full_hamiltonian(&p, sp(2, 2, 2), 0.0).is_err());
    }

    #[test]
    fn effective_hamiltonian_matrix_elements() {
        let p = lab();
        let s = sp(2, 3, 3);
        let h = build_effective_hamiltonian(&p, s).unwrap();
        assert!(h.hermitian_deviation() < 1e-12);
        let g00 = s.index(0, 0, 0);
        assert!((h.get(g00, g00).re - p.omega2.powi(2) / p.delta2).abs() < 1e-9);
        let flip = h.get(s.index(0, 1, 0), s.index(1, 0, 0)).re;
        assert!((flip - p.omega1 * p.g1 / p.delta1).abs() < 1e-9);
        let d = derive_rates(&p).unwrap();
        // two-photon amplitudes <g,1,0|H|h,0,0> and <h,0,1|H|g,0,0>
        assert!((flip.abs() - d.theta1).abs() < 1e-9);
        let other = h.get(s.index(1, 0, 1), g00).re;
        assert!((other.abs() - d.theta2).abs() < 1e-9);
    }

    #[test]
    fn rewritten_form_equals_effective_for_opposite_detuning_signs() {
        // moduli form holds for Δ1 < 0 < Δ2 with positive couplings
        let s = sp(2, 4, 4);
        let p = lab();
        let a = build_effective_hamiltonian(&p, s).unwrap();
        let b = build_rewritten_hamiltonian(&p, s).unwrap();
        assert!((&a - &b).max_abs() < 1e-12 * a.max_abs());
    }

    #[test]
    fn zero_squeezing_recovers_anti_jaynes_cummings() {
        let s = sp(2, 4, 4);
        let p = PhysicalParams::new(1.0, 0.0, 1.0, 1.0, 10.0, -20.0, 0.0, 0.0, 0.0).unwrap();
        let d = derive_rates(&p).unwrap();
        assert_eq!(d.epsilon, 0.0);
        let h = build_selective_hamiltonian(&d, &StarkShifts::zero(), s).unwrap();
        let a1 = annihilation_op(s, 1).unwrap();
        let hg = atom_transition_op(s, AtomLevel::H, AtomLevel::G).unwrap();
        let half = a1.dot(&hg).scale(-d.theta1);
        let want = &half + &half.dagger();
        assert!((&h - &want).max_abs() < 1e-15);
    }

    #[test]
    fn squeeze_operator_basics() {
        let s = sp(1, 6, 6);
        assert_eq!(
            build_squeeze_operator(s, 0.0).unwrap(),
            Operator::identity(s)
        );
        let err = build_squeeze_operator(sp(1, 3, 3), 2.0).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }));
    }

    #[test]
    fn displacement_examples() {
        let s = sp(1, 25, 2);
        let zero = C64::from(0.0);
        assert!(
            (&build_displacement_operator(s, zero, zero).unwrap() - &Operator::identity(s))
                .max_abs()
                < 1e-15
        );
        let alpha = C64::from(1.0);
        let d = build_displacement_operator(s, alpha, zero).unwrap();
        let back = build_displacement_operator(s, -alpha, zero).unwrap();
        assert!((&d.dot(&back) - &Operator::identity(s)).max_abs() < 1e-8);
        assert!((&d.dagger().dot(&d) - &Operator::identity(s)).max_abs() < 1e-8);
        // Poissonian photon statistics
        let vac = StateVector::basis(s, AtomLevel::G, 0, 0).unwrap();
        let coh = d.apply(&vac);
        let mut fact = 1.0;
        for n in 0..12 {
            if n > 0 {
                fact *= n as f64;
            }
            let want = (-1.0f64).exp() / fact;
            let got = coh.amplitudes()[s.index(0, n, 0)].norm_sqr();
            assert!((got - want).abs() < 1e-6, "n={n}: {got} vs {want}");
        }
        assert!(displacement_within_truncation(s, alpha, zero));
        assert!(!displacement_within_truncation(s, C64::from(3.0), zero));
        assert!(build_displacement_operator(s, C64::new(f64::NAN, 0.0), zero).is_err());
    }

    #[test]
    fn decay_estimate() {
        let p = PhysicalParams::new(0.04, 1.0, 1.0, 1.0, 1.0, 2.0, 5.0, 0.0, 0.0).unwrap();
        let e = spontaneous_decay_estimate(&p);
        assert!((e.excited_occupation - 1.6e-3).abs() < 1e-15);
        assert!((e.rate - 1.6e-3 * 5.0).abs() < 1e-15);
        let mut q = p;
        q.omega1 = 0.0;
        assert_eq!(spontaneous_decay_estimate(&q).rate, 0.0);
        q = p;
        q.gamma_e = 0.0;
        assert_eq!(spontaneous_decay_estimate(&q).rate, 0.0);
    }

    #[test]
    fn param_file_conversion() {
        let f = ParamFile {
            omega1_hz: 40e3,
            omega2_hz: 40e3 / 0.48,
            g1_hz: 50e3,
            g2_hz: 50e3,
            delta1_hz: -1e6,
            delta2_hz: 2e6,
            gamma_e_hz: 0.0,
            r_a_hz: 100.0,
            tau_s: 1e-5,
        };
        let p = f.to_params().unwrap();
        assert!((p.omega1 - 2.0 * PI * 40e3).abs() < 1e-9);
        assert_eq!(p.r_a, 100.0);
        let back = ParamFile::from_params(&p);
        assert!((back.omega2_hz - f.omega2_hz).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn scaling_covariance(lambda in 0.01f64..100.0) {
            let p = lab();
            let d = derive_rates(&p).unwrap();
            let q = derive_rates(&p.scale_frequencies(lambda)).unwrap();
            prop_assert!((q.r - d.r).abs() < 1e-12);
            prop_assert!((q.epsilon - d.epsilon).abs() < 1e-10);
            prop_assert!((q.theta1 / d.theta1 - lambda).abs() < 1e-9 * lambda);
            prop_assert!((q.theta2 / d.theta2 - lambda).abs() < 1e-9 * lambda);
            prop_assert!((q.theta_b / d.theta_b - lambda).abs() < 1e-9 * lambda);
        }
    }
}
