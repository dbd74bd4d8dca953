//! Figures of merit on Fock-space states: quadrature variances, the Duan
//! sum, photon numbers, fidelity to the two-mode squeezed vacuum and the
//! preparation-time estimate.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dynamics::Probe;
use crate::error::{Error, Result};
use crate::gaussian::{self, EprVariances, GaussianState};
use crate::hilbert::{
    annihilation_op, expectation, number_op, DensityMatrix, Operator, SpaceDescriptor, StateVector,
};
use crate::linalg::{SparseRows, C64};
use crate::model;

/// Largest neglected tail mass accepted when building the target vector.
pub const TMSV_TAIL_LIMIT: f64 = 1e-6;
/// Largest neglected tail mass accepted for a fidelity target.
pub const FIDELITY_TAIL_LIMIT: f64 = 1e-3;
/// Boundary population above which Fock results are flagged.
pub const LEAK_WARNING: f64 = 1e-3;
/// Residual Bogoliubov occupation that counts as "prepared".
pub const DEFAULT_N_TARGET: f64 = 0.1;

fn field_only(s: SpaceDescriptor) -> Result<()> {
    if s.is_field_only() {
        Ok(())
    } else {
        Err(Error::InvalidSpace(format!(
            "expected a field-only space, got {s}"
        )))
    }
}

fn tmsv_vector(s: SpaceDescriptor, epsilon: f64, tail_limit: f64) -> Result<StateVector> {
    field_only(s)?;
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::InvalidParams(format!(
            "epsilon = {epsilon} must be >= 0"
        )));
    }
    let tail = model::squeeze_tail(s, epsilon);
    if tail >= tail_limit {
        return Err(Error::Truncation {
            required: model::required_truncation(epsilon, tail_limit),
            reason: format!("two-mode squeezed tail {tail:.2e} >= {tail_limit:.0e}"),
        });
    }
    let t = epsilon.tanh();
    let mut amps = Array1::zeros(s.dim());
    for n in 0..s.n1().min(s.n2()) {
        amps[s.index(0, n, n)] = C64::from(t.powi(n as i32) / epsilon.cosh());
    }
    Ok(StateVector::new(s, amps)?.normalized())
}

/// `Σ_n tanhⁿε / cosh ε |n, n>`, renormalized after truncation.
pub fn tmsv_state_vector(s: SpaceDescriptor, epsilon: f64) -> Result<StateVector> {
    tmsv_vector(s, epsilon, TMSV_TAIL_LIMIT)
}

/// `(X1, P1, X2, P2)` with `X = (a + a†)/2`, `P = (a − a†)/(2i)`.
pub fn quadrature_ops(s: SpaceDescriptor) -> Result<[Operator; 4]> {
    let quad = |mode| -> Result<(Operator, Operator)> {
        let a = annihilation_op(s, mode)?;
        let ad = a.dagger();
        let x = (&a + &ad).scale(0.5);
        let p = (&a - &ad).scale(C64::new(0.0, -0.5));
        Ok((x, p))
    };
    let (x1, p1) = quad(1)?;
    let (x2, p2) = quad(2)?;
    Ok([x1, p1, x2, p2])
}

/// `<a_mode† a_mode>`.
pub fn mean_photon(rho: &DensityMatrix, mode: usize) -> Result<f64> {
    Ok(expectation(rho, &number_op(rho.space(), mode)?)?.re)
}

/// EPR variances from Fock-space expectation values.
pub fn epr_variances_fock(rho: &DensityMatrix) -> Result<EprVariances> {
    field_only(rho.space())?;
    let probe = FieldProbe::new(rho.space(), 0.0)?;
    let m = probe.moments(rho);
    Ok(probe.variances(&m))
}

/// `F = <ψ_ε|ρ|ψ_ε>` with the truncated, renormalized target.
pub fn fidelity_to_tmsv(rho: &DensityMatrix, epsilon: f64) -> Result<f64> {
    let psi = tmsv_vector(rho.space(), epsilon, FIDELITY_TAIL_LIMIT)?;
    rho.overlap_with(&psi)
}

/// Per-step duration needed to pump the Bogoliubov occupation from the
/// vacuum value `n̄₀ = r²/(1 − r²)` down to `n_target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparationTime {
    pub n_initial: f64,
    pub per_step: f64,
    pub total: f64,
    pub warning: Option<String>,
}

pub fn preparation_time(r: f64, gamma: f64, n_target: f64) -> Result<PreparationTime> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParams(format!("r = {r} must lie in (0, 1)")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParams(format!("gamma = {gamma} must be > 0")));
    }
    if !(n_target > 0.0) {
        return Err(Error::InvalidParams(format!(
            "n_target = {n_target} must be > 0"
        )));
    }
    let n_initial = r * r / (1.0 - r * r);
    if n_target >= n_initial {
        return Ok(PreparationTime {
            n_initial,
            per_step: 0.0,
            total: 0.0,
            warning: Some(format!(
                "vacuum occupation {n_initial:.4} already below target {n_target}"
            )),
        });
    }
    let per_step = (n_initial / n_target).ln() / gamma;
    Ok(PreparationTime {
        n_initial,
        per_step,
        total: 2.0 * per_step,
        warning: None,
    })
}

/// Kolmogorov–Smirnov distance between `samples` and the exponential law
/// of rate `rate`.
pub fn ks_statistic_exponential(samples: &[f64], rate: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let cdf = 1.0 - (-rate * x).exp();
        d.max(((i + 1) as f64 / n - cdf).abs())
            .max((cdf - i as f64 / n).abs())
    })
}

/// Summary of how close a state is to the two-mode squeezed vacuum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub epsilon_target: f64,
    pub v_squeezed: f64,
    pub v_antisqueezed: f64,
    pub duan_sum: f64,
    pub n1_mean: f64,
    pub n2_mean: f64,
    pub fidelity: f64,
    pub truncation_leak: f64,
}

impl SqueezingReport {
    pub fn from_fock(rho: &DensityMatrix, epsilon: f64) -> Result<Self> {
        let epr = epr_variances_fock(rho)?;
        Ok(Self {
            epsilon_target: epsilon,
            v_squeezed: epr.x_minus,
            v_antisqueezed: epr.x_plus,
            duan_sum: epr.duan_sum(),
            n1_mean: mean_photon(rho, 1)?,
            n2_mean: mean_photon(rho, 2)?,
            fidelity: fidelity_to_tmsv(rho, epsilon)?,
            truncation_leak: rho.truncation_leak(),
        })
    }

    pub fn from_gaussian(state: &GaussianState, epsilon: f64) -> Result<Self> {
        let epr = state.epr_variances();
        let [n1, n2] = state.photon_numbers();
        Ok(Self {
            epsilon_target: epsilon,
            v_squeezed: epr.x_minus,
            v_antisqueezed: epr.x_plus,
            duan_sum: epr.duan_sum(),
            n1_mean: n1,
            n2_mean: n2,
            fidelity: gaussian::gaussian_fidelity_to_pure(
                state,
                &gaussian::gaussian_tmsv(epsilon),
            )?,
            truncation_leak: 0.0,
        })
    }

    pub fn leak_warning(&self) -> Option<String> {
        (self.truncation_leak > LEAK_WARNING).then(|| {
            format!(
                "boundary Fock population {:.2e} exceeds {LEAK_WARNING:.0e}",
                self.truncation_leak
            )
        })
    }
}

/// Observable names shared by every engine's trajectory output.
pub const FIELD_OBSERVABLES: [&str; 9] = [
    "nb1",
    "nb2",
    "n1",
    "n2",
    "v_x_minus",
    "v_x_plus",
    "v_p_minus",
    "v_p_plus",
    "duan_sum",
];

/// Values of [`FIELD_OBSERVABLES`] for a Gaussian state.
pub fn gaussian_observables(state: &GaussianState, epsilon: f64) -> Vec<f64> {
    let nb = |w| state.number_expectation(&gaussian::bogoliubov_coefficients(epsilon, w).unwrap());
    let [n1, n2] = state.photon_numbers();
    let e = state.epr_variances();
    vec![
        nb(1),
        nb(2),
        n1,
        n2,
        e.x_minus,
        e.x_plus,
        e.p_minus,
        e.p_plus,
        e.duan_sum(),
    ]
}

/// Records [`FIELD_OBSERVABLES`] from Fock-space states. The raw moments
/// are linear in ρ so ensembles can be averaged before variances are formed.
pub struct FieldProbe {
    ops: Vec<SparseRows>,
}

impl FieldProbe {
    pub fn new(s: SpaceDescriptor, epsilon: f64) -> Result<Self> {
        field_only(s)?;
        let b1 = model::bogoliubov_mode(s, epsilon, 1)?;
        let b2 = model::bogoliubov_mode(s, epsilon, 2)?;
        let [x1, p1, x2, p2] = quadrature_ops(s)?;
        let sq = |o: Operator| o.dot(&o);
        let ops = vec![
            b1.dagger().dot(&b1),
            b2.dagger().dot(&b2),
            number_op(s, 1)?,
            number_op(s, 2)?,
            x1.clone(),
            x2.clone(),
            p1.clone(),
            p2.clone(),
            sq(&x1 - &x2),
            sq(&x1 + &x2),
            sq(&p1 - &p2),
            sq(&p1 + &p2),
        ];
        Ok(Self {
            ops: ops.iter().map(Operator::sparse).collect(),
        })
    }

    fn variances(&self, m: &[f64]) -> EprVariances {
        let (x1, x2, p1, p2) = (m[4], m[5], m[6], m[7]);
        EprVariances {
            x_minus: m[8] - (x1 - x2).powi(2),
            x_plus: m[9] - (x1 + x2).powi(2),
            p_minus: m[10] - (p1 - p2).powi(2),
            p_plus: m[11] - (p1 + p2).powi(2),
        }
    }
}

impl Probe for FieldProbe {
    fn names(&self) -> Vec<String> {
        FIELD_OBSERVABLES.iter().map(|s| s.to_string()).collect()
    }

    fn moments(&self, rho: &DensityMatrix) -> Vec<f64> {
        self.ops
            .iter()
            .map(|o| o.trace_with(&rho.matrix().view()).re)
            .collect()
    }

    fn finish(&self, m: &[f64]) -> Vec<f64> {
        let e = self.variances(m);
        vec![
            m[0],
            m[1],
            m[2],
            m[3],
            e.x_minus,
            e.x_plus,
            e.p_minus,
            e.p_plus,
            e.duan_sum(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{matrix_exponential, AtomLevel};
    use proptest::prelude::*;

    fn field(n: usize) -> SpaceDescriptor {
        SpaceDescriptor::field(n, n).unwrap()
    }

    #[test]
    fn tmsv_vector_examples() {
        let s = field(25);
        let v0 = tmsv_state_vector(s, 0.0).unwrap();
        assert_eq!(v0.amplitudes()[s.index(0, 0, 0)], C64::from(1.0));
        let v = tmsv_state_vector(s, 0.5).unwrap();
        let ratio = v.amplitudes()[s.index(0, 1, 1)] / v.amplitudes()[s.index(0, 0, 0)];
        assert!((ratio.re - 0.5f64.tanh()).abs() < 1e-15);
        assert!((v.norm() - 1.0).abs() < 1e-14);
        let err = tmsv_state_vector(field(5), 0.69).unwrap_err();
        match err {
            Error::Truncation { required, .. } => assert!(required > 5),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn ks_statistic_of_exact_quantiles() {
        let n = 1000;
        let rate = 2.0;
        let xs: Vec<f64> = (0..n)
            .map(|i| -((1.0 - (i as f64 + 0.5) / n as f64).ln()) / rate)
            .collect();
        let d = ks_statistic_exponential(&xs, rate);
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
        assert!(ks_statistic_exponential(&xs, 2.0 * rate) > 0.2);
    }

    #[test]
    fn quadrature_examples() {
        let s = field(8);
        let [x1, p1, ..] = quadrature_ops(s).unwrap();
        let vac = DensityMatrix::vacuum(s);
        assert!((expectation(&vac, &x1.dot(&x1)).unwrap().re - 0.25).abs() < 1e-15);
        let comm = x1.commutator(&p1);
        for n1 in 0..7 {
            for n2 in 0..8 {
                let i = s.index(0, n1, n2);
                assert!((comm.get(i, i) - C64::new(0.0, 0.5)).norm() < 1e-14);
            }
        }
        let s = field(30);
        let d = model::build_displacement_operator(s, C64::from(0.8), C64::from(0.0)).unwrap();
        let coh = DensityMatrix::vacuum(s).transformed(&d).unwrap();
        let [x1, ..] = quadrature_ops(s).unwrap();
        assert!((expectation(&coh, &x1).unwrap().re - 0.8).abs() < 1e-9);
    }

    #[test]
    fn epr_examples() {
        let vac = DensityMatrix::vacuum(field(6));
        let e = epr_variances_fock(&vac).unwrap();
        for v in [e.x_minus, e.x_plus, e.p_minus, e.p_plus] {
            assert!((v - 0.5).abs() < 1e-14);
        }
        let eps = 0.6f64.atanh();
        let rho = DensityMatrix::pure(&tmsv_state_vector(field(20), eps).unwrap());
        let e = epr_variances_fock(&rho).unwrap();
        assert!((e.x_minus - 0.125).abs() < 1e-4);
        assert!((e.p_plus - 0.125).abs() < 1e-4);
        assert!(e.entangled());
        let g = gaussian::gaussian_tmsv(0.5).epr_variances();
        let rho = DensityMatrix::pure(&tmsv_state_vector(field(25), 0.5).unwrap());
        let f = epr_variances_fock(&rho).unwrap();
        assert!((f.x_minus - g.x_minus).abs() < 1e-5);
        assert!((f.x_plus - g.x_plus).abs() < 1e-5);
        assert!((f.p_minus - g.p_minus).abs() < 1e-5);
        assert!((f.p_plus - g.p_plus).abs() < 1e-5);
    }

    #[test]
    fn squeezed_pair_matches_fock_construction() {
        // The Fock-built state fixes which joint quadrature is squeezed.
        let s = field(20);
        let rho = DensityMatrix::pure(&tmsv_state_vector(s, 0.4).unwrap());
        let [x1, _, x2, _] = quadrature_ops(s).unwrap();
        let cross = expectation(&rho, &x1.dot(&x2)).unwrap().re;
        assert!(cross > 0.0);
        assert!((cross - gaussian::gaussian_tmsv(0.4).cov()[[0, 2]]).abs() < 1e-8);
    }

    #[test]
    fn fidelity_examples() {
        let s = field(20);
        let psi = tmsv_state_vector(s, 0.5).unwrap();
        let rho = DensityMatrix::pure(&psi);
        assert!((fidelity_to_tmsv(&rho, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let vac = DensityMatrix::vacuum(s);
        let f = fidelity_to_tmsv(&vac, 0.5).unwrap();
        // the truncated target is renormalized; its tail is below 1e-10
        assert!((f - 1.0 / 0.5f64.cosh().powi(2)).abs() < 1e-9);
        assert!((fidelity_to_tmsv(&vac, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_photon_examples() {
        let s = field(20);
        assert_eq!(mean_photon(&DensityMatrix::vacuum(s), 1).unwrap(), 0.0);
        let two = DensityMatrix::basis(s, AtomLevel::G, 2, 0).unwrap();
        assert!((mean_photon(&two, 1).unwrap() - 2.0).abs() < 1e-14);
        let rho = DensityMatrix::pure(&tmsv_state_vector(s, 0.5).unwrap());
        assert!((mean_photon(&rho, 1).unwrap() - 0.5f64.sinh().powi(2)).abs() < 1e-4);
        assert!((mean_photon(&rho, 2).unwrap() - 0.5f64.sinh().powi(2)).abs() < 1e-4);
    }

    #[test]
    fn preparation_time_examples() {
        let p = preparation_time(0.95, 1.0, 0.1).unwrap();
        assert!((p.n_initial - 0.9025 / 0.0975).abs() < 1e-12);
        assert!((p.per_step - (p.n_initial / 0.1).ln()).abs() < 1e-12);
        assert_eq!(p.total, 2.0 * p.per_step);
        let tiny = preparation_time(1e-3, 1.0, 0.1).unwrap();
        assert_eq!(tiny.total, 0.0);
        assert!(tiny.warning.is_some());
        assert!(preparation_time(1.0, 1.0, 0.1).is_err());
        assert!(preparation_time(0.5, 0.0, 0.1).is_err());
    }

    #[test]
    fn report_for_target_state() {
        let eps = 0.4;
        let rho = DensityMatrix::pure(&tmsv_state_vector(field(18), eps).unwrap());
        let r = SqueezingReport::from_fock(&rho, eps).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-12);
        assert!(r.v_squeezed * r.v_antisqueezed >= 0.25 - 1e-6);
        assert!(r.leak_warning().is_none());
        let g = SqueezingReport::from_gaussian(&gaussian::gaussian_tmsv(eps), eps).unwrap();
        assert!((g.fidelity - 1.0).abs() < 1e-12);
        assert!((g.v_squeezed - r.v_squeezed).abs() < 1e-6);
        let json = serde_json::to_value(&r).unwrap();
        for key in [
            "epsilon_target",
            "v_squeezed",
            "v_antisqueezed",
            "duan_sum",
            "n1_mean",
            "n2_mean",
            "fidelity",
            "truncation_leak",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn tmsv_matches_squeeze_operator() {
        let s = field(25);
        let sq = model::build_squeeze_operator(s, 0.5).unwrap();
        let vac = StateVector::basis(s, AtomLevel::G, 0, 0).unwrap();
        let built = sq.dagger().apply(&vac);
        let psi = tmsv_state_vector(s, 0.5).unwrap();
        assert!(psi.inner(&built).norm_sqr() >= 1.0 - 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn tmsv_moments(r in 0.01f64..0.7) {
            let eps = r.atanh();
            let s = field(28);
            let rho = DensityMatrix::pure(&tmsv_state_vector(s, eps).unwrap());
            let e = epr_variances_fock(&rho).unwrap();
            prop_assert!((e.x_minus * e.x_plus - 0.25).abs() < 1e-4);
            prop_assert!((mean_photon(&rho, 1).unwrap() - eps.sinh().powi(2)).abs() < 1e-4);
            prop_assert!(e.duan_sum() < 1.0);
            prop_assert!((fidelity_to_tmsv(&rho, eps).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fidelity_phase_invariance(phi in -3.0f64..3.0, eps in 0.1f64..0.6) {
            let s = field(14);
            let u = matrix_exponential(&number_op(s, 1).unwrap(), C64::new(0.0, phi)).unwrap();
            let mut amps = Array1::zeros(s.dim());
            amps[s.index(0, 0, 0)] = C64::from(0.8);
            amps[s.index(0, 1, 1)] = C64::new(0.3, 0.4);
            amps[s.index(0, 2, 0)] = C64::from(0.346);
            let rho = DensityMatrix::pure(&StateVector::new(s, amps).unwrap().normalized());
            let psi = tmsv_state_vector(s, eps).unwrap();
            let rotated_rho = rho.transformed(&u).unwrap();
            let rotated_psi = u.apply(&psi);
            let f0 = rho.overlap_with(&psi).unwrap();
            let f1 = rotated_rho.overlap_with(&rotated_psi).unwrap();
            prop_assert!((f0 - f1).abs() < 1e-12);
        }

        #[test]
        fn preparation_time_increases_with_r(r in 0.35f64..0.98, dr in 1e-3f64..0.01) {
            let a = preparation_time(r, 2.0, 0.1).unwrap();
            let b = preparation_time((r + dr).min(0.999), 2.0, 0.1).unwrap();
            prop_assert!(b.per_step > a.per_step);
        }
    }

    #[test]
    fn probe_matches_direct_variances() {
        let s = field(12);
        let probe = FieldProbe::new(s, 0.3).unwrap();
        let rho = DensityMatrix::pure(&tmsv_state_vector(s, 0.3).unwrap());
        let rec = probe.record(&rho);
        assert!(rec[0].abs() < 1e-12 && rec[1].abs() < 1e-12);
        let e = epr_variances_fock(&rho).unwrap();
        assert!((rec[4] - e.x_minus).abs() < 1e-14);
    }
}
