//! Two-mode Gaussian states in the quadrature ordering `(X1, P1, X2, P2)`
//! with `X = (a + a†)/2`, `P = (a − a†)/(2i)`; the vacuum covariance is `I/4`.

use ndarray::{array, s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

const UNCERTAINTY_FLOOR: f64 = 1e-10;

/// Symplectic form for one `(X, P)` pair, `[R_i, R_j] = (i/2) Ω_ij`.
pub fn symplectic_form() -> Array2<f64> {
    array![
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0]
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianJson", into = "GaussianJson")]
pub struct GaussianState {
    mean: Array1<f64>,
    cov: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct GaussianJson {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl From<GaussianState> for GaussianJson {
    fn from(g: GaussianState) -> Self {
        Self {
            mean: g.mean.to_vec(),
            cov: g.cov.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }
}

impl TryFrom<GaussianJson> for GaussianState {
    type Error = Error;
    fn try_from(j: GaussianJson) -> Result<Self> {
        if j.mean.len() != 4 || j.cov.len() != 4 || j.cov.iter().any(|r| r.len() != 4) {
            return Err(Error::InvalidDensity(
                "gaussian state needs mean[4] and cov[4][4]".into(),
            ));
        }
        let cov = Array2::from_shape_fn((4, 4), |(i, k)| j.cov[i][k]);
        GaussianState::new(Array1::from(j.mean), cov)
    }
}

impl GaussianState {
    /// Validates symmetry and the uncertainty relation `V + (i/4)Ω >= 0`.
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        if mean.len() != 4 || cov.dim() != (4, 4) {
            return Err(Error::InvalidDensity("gaussian state is two-mode".into()));
        }
        if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gaussian moments"));
        }
        let asym = (&cov - &cov.t())
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        if asym > 1e-12 {
            return Err(Error::InvalidDensity(format!(
                "covariance not symmetric ({asym:e})"
            )));
        }
        let state = Self { mean, cov };
        if !state.satisfies_uncertainty() {
            return Err(Error::InvalidDensity(
                "covariance violates the uncertainty relation".into(),
            ));
        }
        Ok(state)
    }

    fn from_parts(mean: Array1<f64>, cov: Array2<f64>) -> Self {
        let cov = (&cov + &cov.t()) * 0.5;
        Self { mean, cov }
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<f64> {
        &self.cov
    }

    pub fn satisfies_uncertainty(&self) -> bool {
        let omega = symplectic_form();
        let m = Array2::from_shape_fn((4, 4), |(i, k)| {
            C64::new(self.cov[[i, k]], 0.25 * omega[[i, k]])
        });
        linalg::is_positive_above(&m.view(), UNCERTAINTY_FLOOR)
    }

    /// Coherent displacement of both modes, `<a_j> = α_j`.
    pub fn displaced(&self, alpha1: C64, alpha2: C64) -> Self {
        let mut mean = self.mean.clone();
        mean[0] += alpha1.re;
        mean[1] += alpha1.im;
        mean[2] += alpha2.re;
        mean[3] += alpha2.im;
        Self::from_parts(mean, self.cov.clone())
    }

    /// `V -> S V Sᵀ`, `m -> S m`.
    pub fn transformed(&self, s: &Array2<f64>) -> Self {
        Self::from_parts(s.dot(&self.mean), s.dot(&self.cov).dot(&s.t()))
    }

    /// `<a_j† a_j> = V_XX + V_PP + <X>² + <P>² − 1/2`.
    pub fn photon_numbers(&self) -> [f64; 2] {
        let n = |k: usize| {
            self.cov[[k, k]]
                + self.cov[[k + 1, k + 1]]
                + self.mean[k].powi(2)
                + self.mean[k + 1].powi(2)
                - 0.5
        };
        [n(0), n(2)]
    }

    /// `<L† L>` for `L = Σ l_i R_i`.
    pub fn number_expectation(&self, l: &[C64; 4]) -> f64 {
        let omega = symplectic_form();
        let mut acc = C64::from(0.0);
        for i in 0..4 {
            for k in 0..4 {
                let rr = self.cov[[i, k]] + self.mean[i] * self.mean[k];
                let corr = C64::new(rr, 0.25 * omega[[i, k]]);
                acc += l[i].conj() * l[k] * corr;
            }
        }
        acc.re
    }

    /// Two-mode symplectic eigenvalues, ascending; the vacuum has 1/4.
    pub fn symplectic_eigenvalues(&self) -> [f64; 2] {
        let v = &self.cov;
        let det2 = |a: f64, b: f64, c: f64, d: f64| a * d - b * c;
        let da = det2(v[[0, 0]], v[[0, 1]], v[[1, 0]], v[[1, 1]]);
        let db = det2(v[[2, 2]], v[[2, 3]], v[[3, 2]], v[[3, 3]]);
        let dc = det2(v[[0, 2]], v[[0, 3]], v[[1, 2]], v[[1, 3]]);
        let delta = da + db + 2.0 * dc;
        let det = det4(v);
        let disc = (delta * delta - 4.0 * det).max(0.0).sqrt();
        [
            ((delta - disc) / 2.0).max(0.0).sqrt(),
            ((delta + disc) / 2.0).max(0.0).sqrt(),
        ]
    }

    pub fn epr_variances(&self) -> EprVariances {
        let v = &self.cov;
        EprVariances {
            x_minus: v[[0, 0]] + v[[2, 2]] - 2.0 * v[[0, 2]],
            p_plus: v[[1, 1]] + v[[3, 3]] + 2.0 * v[[1, 3]],
            x_plus: v[[0, 0]] + v[[2, 2]] + 2.0 * v[[0, 2]],
            p_minus: v[[1, 1]] + v[[3, 3]] - 2.0 * v[[1, 3]],
        }
    }
}

/// Variances of the EPR combinations `X1 ± X2`, `P1 ± P2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EprVariances {
    pub x_minus: f64,
    pub p_plus: f64,
    pub x_plus: f64,
    pub p_minus: f64,
}

impl EprVariances {
    /// `Var(X1 − X2) + Var(P1 + P2)`; below 1 signals entanglement.
    pub fn duan_sum(&self) -> f64 {
        self.x_minus + self.p_plus
    }

    pub fn entangled(&self) -> bool {
        self.duan_sum() < 1.0
    }
}

pub fn gaussian_epr_variances(state: &GaussianState) -> EprVariances {
    state.epr_variances()
}

pub fn gaussian_vacuum() -> GaussianState {
    GaussianState::from_parts(Array1::zeros(4), Array2::eye(4) * 0.25)
}

/// Product of thermal states with mean occupations `n1`, `n2`.
pub fn gaussian_thermal(n1: f64, n2: f64) -> Result<GaussianState> {
    if !(n1 >= 0.0 && n2 >= 0.0) {
        return Err(Error::InvalidParams(
            "thermal occupation must be >= 0".into(),
        ));
    }
    let mut cov = Array2::zeros((4, 4));
    for (k, n) in [(0, n1), (2, n2)] {
        cov[[k, k]] = (2.0 * n + 1.0) / 4.0;
        cov[[k + 1, k + 1]] = (2.0 * n + 1.0) / 4.0;
    }
    Ok(GaussianState::from_parts(Array1::zeros(4), cov))
}

/// Symplectic matrix of `S12(ε)† (·) S12(ε)` acting on quadratures,
/// mapping vacuum moments to those of the two-mode squeezed vacuum.
pub fn symplectic_squeeze(epsilon: f64) -> Array2<f64> {
    let (c, s) = (epsilon.cosh(), epsilon.sinh());
    array![
        [c, 0.0, s, 0.0],
        [0.0, c, 0.0, -s],
        [s, 0.0, c, 0.0],
        [0.0, -s, 0.0, c]
    ]
}

/// Two-mode squeezed vacuum `Σ tanhⁿε / cosh ε |n, n>`.
pub fn gaussian_tmsv(epsilon: f64) -> GaussianState {
    gaussian_vacuum().transformed(&symplectic_squeeze(epsilon))
}

/// Quadrature coefficients of `b_j = cosh ε a_j − sinh ε a_k†`.
pub fn bogoliubov_coefficients(epsilon: f64, which: usize) -> Result<[C64; 4]> {
    let (c, s) = (epsilon.cosh(), epsilon.sinh());
    let ci = C64::new(0.0, c);
    let si = C64::new(0.0, s);
    match which {
        1 => Ok([c.into(), ci, (-s).into(), si]),
        2 => Ok([(-s).into(), si, c.into(), ci]),
        m => Err(Error::InvalidMode(m)),
    }
}

/// Quadrature coefficients of the bare annihilator `a_j`.
pub fn mode_coefficients(which: usize) -> Result<[C64; 4]> {
    bogoliubov_coefficients(0.0, which)
}

/// Linear jump operator `L = Σ l_i R_i` with rate `γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianJump {
    pub l: [C64; 4],
    pub rate: f64,
}

fn drift_and_diffusion(jumps: &[GaussianJump]) -> (Array2<f64>, Array2<f64>) {
    let omega = symplectic_form();
    let mut a = Array2::zeros((4, 4));
    let mut d = Array2::zeros((4, 4));
    for j in jumps {
        let im = Array2::from_shape_fn((4, 4), |(p, q)| (j.l[p] * j.l[q].conj()).im);
        let re = Array2::from_shape_fn((4, 4), |(p, q)| (j.l[p].conj() * j.l[q]).re);
        a = a - omega.dot(&im) * (j.rate / 2.0);
        d = d + omega.dot(&re).dot(&omega.t()) * (j.rate / 4.0);
    }
    (a, d)
}

fn real_expm(m: &Array2<f64>) -> Result<Array2<f64>> {
    let e = linalg::expm(&m.mapv(C64::from)).ok_or(Error::NonFinite("gaussian propagator"))?;
    Ok(e.mapv(|z| z.re))
}

/// Damping of the Bogoliubov mode `b_which` at rate `gamma` for time `t`.
pub fn gaussian_lindblad_evolve(
    state: &GaussianState,
    epsilon: f64,
    gamma: f64,
    which: usize,
    t: f64,
) -> Result<GaussianState> {
    let jump = GaussianJump {
        l: bogoliubov_coefficients(epsilon, which)?,
        rate: gamma,
    };
    evolve_linear_jumps(state, &[jump], t)
}

/// Exact solution of the Lindblad equation with linear jumps over time `t`:
/// `dm/dt = A m`, `dV/dt = A V + V Aᵀ + D`.
pub fn evolve_linear_jumps(
    state: &GaussianState,
    jumps: &[GaussianJump],
    t: f64,
) -> Result<GaussianState> {
    if !(t >= 0.0) || jumps.iter().any(|j| !(j.rate >= 0.0)) {
        return Err(Error::Precondition("need t >= 0 and rates >= 0".into()));
    }
    let (a, d) = drift_and_diffusion(jumps);
    let mean = real_expm(&(&a * t))?.dot(&state.mean);
    // vec(AV + VAᵀ) = (I⊗A + A⊗I) vec(V), augmented with the constant D.
    let mut aug = Array2::zeros((17, 17));
    for i in 0..4 {
        for k in 0..4 {
            let row = 4 * i + k;
            for m in 0..4 {
                aug[[row, 4 * m + k]] += a[[i, m]] * t;
                aug[[row, 4 * i + m]] += a[[k, m]] * t;
            }
            aug[[row, 16]] = d[[i, k]] * t;
        }
    }
    let e = real_expm(&aug)?;
    let v0: Array1<f64> = state.cov.iter().copied().collect();
    let vt = e.slice(s![..16, ..16]).dot(&v0) + e.slice(s![..16, 16]);
    let cov = vt.into_shape_with_order((4, 4)).expect("16 entries");
    Ok(GaussianState::from_parts(mean, cov))
}

fn det4(m: &Array2<f64>) -> f64 {
    let mut a = m.clone();
    let mut det = 1.0;
    for c in 0..4 {
        let p = (c..4)
            .max_by(|&x, &y| a[[x, c]].abs().total_cmp(&a[[y, c]].abs()))
            .unwrap();
        if a[[p, c]] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..4 {
                a.swap([p, k], [c, k]);
            }
            det = -det;
        }
        det *= a[[c, c]];
        for r in c + 1..4 {
            let f = a[[r, c]] / a[[c, c]];
            for k in c..4 {
                a[[r, k]] -= f * a[[c, k]];
            }
        }
    }
    det
}

fn solve4(m: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let mc = m.mapv(C64::from);
    let bc = b.mapv(C64::from).into_shape_with_order((4, 1)).ok()?;
    let x = linalg::lu_solve(&mc, &bc)?;
    Some(x.column(0).mapv(|z| z.re))
}

/// Uhlmann fidelity `F = <ψ|ρ|ψ>` between `state` and a pure Gaussian
/// `target`.
pub fn gaussian_fidelity_to_pure(state: &GaussianState, target: &GaussianState) -> Result<f64> {
    let purity_det = det4(target.cov()) * 256.0;
    if (purity_det - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDensity("fidelity target is not pure".into()));
    }
    let sum = &state.cov + &target.cov;
    let delta = &state.mean - &target.mean;
    let x = solve4(&sum, &delta).ok_or(Error::NonFinite("singular covariance sum"))?;
    Ok((-0.5 * delta.dot(&x)).exp() / (16.0 * det4(&sum)).sqrt())
}
