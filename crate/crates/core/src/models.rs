//! Sasakian model spaces with adapted orthonormal frames.
//!
//! All three models are realized as Lie groups with a left-invariant frame
//! {X_1..X_{n/2}, Y_1..Y_{n/2}, S} calibrated so that T(X_i, Y_i) = S and
//! J X_i = Y_i. The brackets are
//!
//!     [X_i, Y_i] = -S,   [S, X_i] = -tau Y_i,   [S, Y_i] = tau X_i,
//!
//! with tau = 0 (Heisenberg, any even n), tau = 4 (Hopf S^3) and tau = -4
//! (anti-de Sitter AdS_3). Under this calibration the pseudo-Hermitian
//! curvature constant comes out as k1 = tau; it is measured from the
//! curvature tensor rather than hardcoded.
//!
//! Every tensor (Bott connection, torsion, J, the adjoint and Levi-Civita
//! curvatures) is evaluated from the structure constants. Points are carried
//! in a model-specific group embedding for integration (the chart itself for
//! Heisenberg, unit quaternions for Hopf, SL(2,R) for AdS) and reported in
//! canonical exponential-chart coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::kernels::{dpsi, psi};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Heisenberg,
    HopfSphere,
    AntiDeSitter,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Heisenberg => write!(f, "heisenberg"),
            ModelKind::HopfSphere => write!(f, "hopf"),
            ModelKind::AntiDeSitter => write!(f, "ads"),
        }
    }
}

/// A tangent vector in frame coefficients at a chart base point.
#[derive(Debug, Clone)]
pub struct FrameVector {
    pub base: Vec<f64>,
    pub coeffs: DVector<f64>,
}

impl FrameVector {
    pub fn new(base: Vec<f64>, coeffs: Vec<f64>) -> Self {
        FrameVector { base, coeffs: DVector::from_vec(coeffs) }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub format_version: u32,
    pub kind: ModelKind,
    pub n: usize,
    pub k1: f64,
    pub k2: f64,
    pub sr_sign: f64,
    /// Nonzero structure constants as (a, b, c, value) meaning [e_a, e_b] has
    /// e_c-component value.
    pub structure_constants: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ModelSpace {
    pub kind: ModelKind,
    /// Horizontal dimension (even).
    pub n: usize,
    /// Frame dimension n + 1; also the chart dimension.
    pub dim: usize,
    /// Bracket rotation constant; equals the measured k1 on these models.
    pub tau: f64,
    pub k1: f64,
    pub k2: f64,
    /// Sign convention of the sub-Riemannian geodesic equation
    /// u' = sr_sign * c * J u, fixed by the eps -> 0 consistency check.
    pub sr_sign: f64,
    /// ad[a] has (c, b) entry c^c_{ab}.
    ad: Vec<DMatrix<f64>>,
    /// gamma[a] has (c, b) entry Gamma^c_{ab} of the Bott connection.
    gamma: Vec<DMatrix<f64>>,
    /// J = J_S as a frame matrix.
    jmat: DMatrix<f64>,
    /// Bott curvature R(e_a, e_b) as matrices acting on the third slot.
    riem: Vec<Vec<DMatrix<f64>>>,
}

pub fn build_model(kind: ModelKind, n: usize) -> Result<ModelSpace> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::UnsupportedModel(format!("{kind} with n = {n} (need even n >= 2)")));
    }
    let tau = match kind {
        ModelKind::Heisenberg => 0.0,
        ModelKind::HopfSphere => {
            if n != 2 {
                return Err(Error::UnsupportedModel(format!("hopf with n = {n} (only n = 2 provided)")));
            }
            4.0
        }
        ModelKind::AntiDeSitter => {
            if n != 2 {
                return Err(Error::UnsupportedModel(format!("ads with n = {n} (only n = 2 provided)")));
            }
            -4.0
        }
    };
    let dim = n + 1;
    let d = n / 2;
    let s = n; // index of the Reeb direction
    let mut ad = vec![DMatrix::zeros(dim, dim); dim];
    let set = |a: usize, b: usize, c: usize, v: f64, ad: &mut Vec<DMatrix<f64>>| {
        ad[a][(c, b)] += v;
        ad[b][(c, a)] -= v;
    };
    for i in 0..d {
        let (xi, yi) = (i, d + i);
        set(xi, yi, s, -1.0, &mut ad); // [X_i, Y_i] = -S
        if tau != 0.0 {
            set(s, xi, yi, -tau, &mut ad); // [S, X_i] = -tau Y_i
            set(s, yi, xi, tau, &mut ad); // [S, Y_i] = tau X_i
        }
    }

    // Bott connection from the structure constants (orthonormal frame):
    // horizontal pair -> horizontal projection of Levi-Civita (Koszul),
    // mixed pairs -> bracket projections, vertical pair -> vertical Koszul.
    let bracket_comp = |a: usize, b: usize, c: usize, ad: &[DMatrix<f64>]| ad[a][(c, b)];
    let mut gamma = vec![DMatrix::zeros(dim, dim); dim];
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let (ha, hb, hc) = (a < n, b < n, c < n);
                let v = if ha && hb {
                    if hc {
                        0.5 * (bracket_comp(a, b, c, &ad) - bracket_comp(b, c, a, &ad)
                            + bracket_comp(c, a, b, &ad))
                    } else {
                        0.0
                    }
                } else if !ha && hb {
                    if hc { bracket_comp(a, b, c, &ad) } else { 0.0 }
                } else if ha && !hb {
                    if !hc { bracket_comp(a, b, c, &ad) } else { 0.0 }
                } else {
                    // single vertical direction: flat along the leaf
                    0.0
                };
                gamma[a][(c, b)] = v;
            }
        }
    }

    // J_S from the torsion: <J_S e_b, e_c> = <S, T(e_b, e_c)> = -c^S_{bc}.
    let mut jmat = DMatrix::zeros(dim, dim);
    for b in 0..n {
        for c in 0..n {
            jmat[(c, b)] = -bracket_comp(b, c, s, &ad);
        }
    }

    // Bott curvature R(e_a, e_b) = [G_a, G_b] - sum_d c^d_{ab} G_d.
    let mut riem = vec![vec![DMatrix::zeros(dim, dim); dim]; dim];
    for a in 0..dim {
        for b in 0..dim {
            let mut m = &gamma[a] * &gamma[b] - &gamma[b] * &gamma[a];
            for dd in 0..dim {
                let cab = bracket_comp(a, b, dd, &ad);
                if cab != 0.0 {
                    m -= cab * &gamma[dd];
                }
            }
            riem[a][b] = m;
        }
    }

    let mut model = ModelSpace {
        kind,
        n,
        dim,
        tau,
        k1: 0.0,
        k2: 0.0,
        sr_sign: -1.0,
        ad,
        gamma,
        jmat,
        riem,
    };
    // measure k1 = <R(X_1, J X_1) J X_1, X_1> at the reference point
    let e = |i: usize| {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v
    };
    let x1 = e(0);
    let jx1 = model.j_coeffs(&x1);
    model.k1 = model.riem_coeffs(&x1, &jx1, &jx1).dot(&x1);
    model.k2 = if n > 2 {
        let v = e(1); // X_2 is orthogonal to X_1 and J X_1 = Y_1
        model.riem_coeffs(&x1, &v, &v).dot(&x1)
    } else {
        model.k1
    };
    Ok(model)
}

/// Parse "heisenberg3", "heisenberg5", "hopf3", "ads3".
pub fn parse_model_name(name: &str) -> Result<ModelSpace> {
    let (kind, rest) = if let Some(r) = name.strip_prefix("heisenberg") {
        (ModelKind::Heisenberg, r)
    } else if let Some(r) = name.strip_prefix("hopf") {
        (ModelKind::HopfSphere, r)
    } else if let Some(r) = name.strip_prefix("ads") {
        (ModelKind::AntiDeSitter, r)
    } else {
        return Err(Error::UnsupportedModel(name.to_string()));
    };
    let chart_dim: usize =
        rest.parse().map_err(|_| Error::UnsupportedModel(name.to_string()))?;
    if chart_dim < 3 {
        return Err(Error::UnsupportedModel(name.to_string()));
    }
    build_model(kind, chart_dim - 1)
}

impl ModelSpace {
    pub fn name(&self) -> String {
        format!("{}{}", self.kind, self.dim)
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        let mut sc = Vec::new();
        for a in 0..self.dim {
            for b in 0..self.dim {
                for c in 0..self.dim {
                    let v = self.ad[a][(c, b)];
                    if v != 0.0 {
                        sc.push((a, b, c, v));
                    }
                }
            }
        }
        ModelDescriptor {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            n: self.n,
            k1: self.k1,
            k2: self.k2,
            sr_sign: self.sr_sign,
            structure_constants: sc,
        }
    }

    pub fn basis(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        v[i] = 1.0;
        v
    }

    // ----- frame-level metric and tensors ------------------------------------

    pub fn g_inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(v)
    }

    pub fn g_eps_inner(&self, eps: f64, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let s = self.n;
        let mut acc = 0.0;
        for i in 0..s {
            acc += u[i] * v[i];
        }
        acc + u[s] * v[s] / eps
    }

    pub fn horizontal_part(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut v = u.clone();
        v[self.n] = 0.0;
        v
    }

    /// J applied to frame coefficients (J_S extended by zero on V).
    pub fn j_coeffs(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.jmat * u
    }

    pub fn j_matrix(&self) -> &DMatrix<f64> {
        &self.jmat
    }

    /// J_z u for a (possibly mixed) z: only the vertical part of z acts.
    pub fn j_of(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        z[self.n] * (&self.jmat * u)
    }

    /// Bott-connection torsion T(u, v) = -pi_V [u_H, v_H] in frame coefficients.
    pub fn torsion_coeffs(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let s = self.n;
        let mut acc = 0.0;
        for a in 0..self.n {
            if u[a] == 0.0 {
                continue;
            }
            for b in 0..self.n {
                acc += u[a] * v[b] * self.ad[a][(s, b)];
            }
        }
        out[s] = -acc;
        out
    }

    /// Bott curvature R(u, v) w.
    pub fn riem_coeffs(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for a in 0..self.dim {
            if u[a] == 0.0 {
                continue;
            }
            for b in 0..self.dim {
                if v[b] == 0.0 {
                    continue;
                }
                out += u[a] * v[b] * (&self.riem[a][b] * w);
            }
        }
        out
    }

    /// (nabla_u J)_v w computed from the connection coefficients (zero on
    /// Sasakian models; kept in the adjoint-curvature formula for fidelity).
    pub fn nabla_j(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let jv_w = v[self.n] * (&self.jmat * w);
        let gu_jvw = self.gamma_contract(u, &jv_w);
        let gu_v = self.gamma_contract(u, v);
        let j_guv_w = gu_v[self.n] * (&self.jmat * w);
        let gu_w = self.gamma_contract(u, w);
        let jv_guw = v[self.n] * (&self.jmat * &gu_w);
        gu_jvw - j_guv_w - jv_guw
    }

    /// (nabla_u T)(v, w).
    pub fn nabla_t(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let tvw = self.torsion_coeffs(v, w);
        let a = self.gamma_contract(u, &tvw);
        let b = self.torsion_coeffs(&self.gamma_contract(u, v), w);
        let c = self.torsion_coeffs(v, &self.gamma_contract(u, w));
        a - b - c
    }

    /// Bott connection contraction nabla_u v (both constant frame fields).
    pub fn gamma_contract(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for a in 0..self.dim {
            if u[a] != 0.0 {
                out += u[a] * (&self.gamma[a] * v);
            }
        }
        out
    }

    /// Matrix of nabla-hat^eps_u = Bott + (1/eps) J_u acting on coefficients.
    pub fn gamma_hat_matrix(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for a in 0..self.dim {
            if u[a] != 0.0 {
                m += u[a] * &self.gamma[a];
            }
        }
        m += (u[self.n] / eps) * &self.jmat;
        m
    }

    /// Matrix of nabla^eps_u = Bott - T(u, .) + (1/eps) J_(.) u.
    pub fn gamma_eps_matrix(&self, eps: f64, u: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for a in 0..self.dim {
            if u[a] != 0.0 {
                m += u[a] * &self.gamma[a];
            }
        }
        // minus T(u, .): component S, row built from structure constants
        let s = self.n;
        for b in 0..self.n {
            let mut acc = 0.0;
            for a in 0..self.n {
                acc += u[a] * self.ad[a][(s, b)];
            }
            m[(s, b)] += acc; // -T(u, e_b) = +pi_V[u, e_b]
        }
        // + (1/eps) J_(.) u: only the v = S column acts
        let ju = &self.jmat * u;
        for c in 0..self.dim {
            m[(c, s)] += ju[c] / eps;
        }
        m
    }

    /// Torsion of the adjoint connection:
    /// T-hat^eps(u, v) = T(u, v) - (1/eps) J_v u + (1/eps) J_u v.
    pub fn torsion_hat(&self, eps: f64, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.torsion_coeffs(u, v);
        out -= (v[self.n] / eps) * (&self.jmat * u);
        out += (u[self.n] / eps) * (&self.jmat * v);
        out
    }

    /// Geodesic acceleration for the adjoint connection: out = -(Bott[u] u + (u_S/eps) J u).
    pub fn hat_accel(&self, eps: f64, u: &DVector<f64>, out: &mut [f64]) {
        for c in 0..self.dim {
            let mut acc = 0.0;
            for a in 0..self.dim {
                let ua = u[a];
                if ua == 0.0 {
                    continue;
                }
                for b in 0..self.dim {
                    acc += self.gamma[a][(c, b)] * ua * u[b];
                }
            }
            let mut j = 0.0;
            for b in 0..self.dim {
                j += self.jmat[(c, b)] * u[b];
            }
            out[c] = -acc - (u[self.n] / eps) * j;
        }
    }

    /// Sub-Riemannian acceleration: out = signed_charge * J u - Bott[u] u.
    pub fn sr_accel(&self, signed_charge: f64, u: &DVector<f64>, out: &mut [f64]) {
        for c in 0..self.dim {
            let mut acc = 0.0;
            for a in 0..self.dim {
                let ua = u[a];
                if ua == 0.0 {
                    continue;
                }
                for b in 0..self.dim {
                    acc += self.gamma[a][(c, b)] * ua * u[b];
                }
            }
            let mut j = 0.0;
            for b in 0..self.dim {
                j += self.jmat[(c, b)] * u[b];
            }
            out[c] = signed_charge * j - acc;
        }
    }

    /// Adjoint-connection curvature R-hat^eps(u, v) w by the general formula.
    pub fn riem_adjoint(&self, eps: f64, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        if eps <= 0.0 {
            return Err(Error::NonPositiveEps(eps));
        }
        let r = self.riem_coeffs(u, v, w);
        let tuv = self.torsion_coeffs(u, v);
        let j_tuv_w = tuv[self.n] * (&self.jmat * w);
        let ju_jv_w = u[self.n] * v[self.n] * (&self.jmat * (&self.jmat * w));
        let jv_ju_w = v[self.n] * u[self.n] * (&self.jmat * (&self.jmat * w));
        let nj = self.nabla_j(u, v, w) - self.nabla_j(v, u, w);
        Ok(r + j_tuv_w / eps + (ju_jv_w - jv_ju_w) / (eps * eps) + nj / eps)
    }

    /// Levi-Civita curvature of g_eps via the Bott-connection expansion.
    pub fn riem_levicivita(&self, eps: f64, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        if eps <= 0.0 {
            return Err(Error::NonPositiveEps(eps));
        }
        let j = |z: &DVector<f64>, t: &DVector<f64>| -> DVector<f64> { z[self.n] * (&self.jmat * t) };
        let mut out = self.riem_coeffs(u, v, w);
        out -= 0.5 * self.nabla_t(u, v, w);
        out += 0.5 * self.nabla_t(v, u, w);
        out += (0.5 / eps) * (self.nabla_j(u, v, w) - self.nabla_j(v, u, w));
        out += (0.5 / eps) * (self.nabla_j(u, w, v) - self.nabla_j(v, w, u));
        let tuv = self.torsion_coeffs(u, v);
        out += (0.5 / eps) * j(&tuv, w);
        let jvw_jwv = j(v, w) + j(w, v);
        out -= (0.25 / eps) * self.torsion_coeffs(u, &jvw_jwv);
        out += (0.25 / (eps * eps)) * j(u, &jvw_jwv);
        let tvw = self.torsion_coeffs(v, w);
        out -= (0.25 / eps) * j(&tvw, u);
        let juw_jwu = j(u, w) + j(w, u);
        out += (0.25 / eps) * self.torsion_coeffs(v, &juw_jwu);
        out -= (0.25 / (eps * eps)) * j(v, &juw_jwu);
        let tuw = self.torsion_coeffs(u, w);
        out += (0.25 / eps) * j(&tuw, v);
        Ok(out)
    }

    /// Ricci curvature of g_eps evaluated on (u, u) by tracing the
    /// Levi-Civita curvature over a g_eps-orthonormal frame.
    pub fn ricci_eps(&self, eps: f64, u: &DVector<f64>) -> Result<f64> {
        let mut acc = 0.0;
        for a in 0..self.n {
            let ea = self.basis(a);
            let r = self.riem_levicivita(eps, &ea, u, &u.clone())?;
            acc += r[a];
        }
        let es = self.basis(self.n);
        let r = self.riem_levicivita(eps, &es, u, &u.clone())?;
        acc += r[self.n];
        Ok(acc)
    }

    /// Horizontal Ricci curvature of the Bott connection on (u, u).
    pub fn ricci_h(&self, u: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for a in 0..self.n {
            let ea = self.basis(a);
            acc += self.riem_coeffs(&ea, u, u)[a];
        }
        acc
    }

    /// Horizontal divergence of the torsion applied to u (Yang-Mills check).
    pub fn delta_h_torsion(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for a in 0..self.n {
            let ea = self.basis(a);
            out -= self.nabla_t(&ea, &ea, u);
        }
        out
    }

    // ----- point-level operations on frame vectors ---------------------------

    pub fn j_apply(&self, v: &FrameVector) -> FrameVector {
        FrameVector { base: v.base.clone(), coeffs: self.j_coeffs(&v.coeffs) }
    }

    pub fn torsion(&self, v: &FrameVector, w: &FrameVector) -> Result<FrameVector> {
        if v.base != w.base {
            return Err(Error::MismatchedBasePoints);
        }
        Ok(FrameVector { base: v.base.clone(), coeffs: self.torsion_coeffs(&v.coeffs, &w.coeffs) })
    }

    // ----- chart and group embedding ------------------------------------------

    /// Dimension of the internal position representation.
    pub fn pos_dim(&self) -> usize {
        match self.kind {
            ModelKind::Heisenberg => self.dim,
            ModelKind::HopfSphere | ModelKind::AntiDeSitter => 4,
        }
    }

    /// ad_v as a matrix, v in chart (= algebra) coordinates.
    fn ad_of(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, va) in v.iter().enumerate() {
            if *va != 0.0 {
                m += *va * &self.ad[a];
            }
        }
        m
    }

    /// Frame-coefficient matrix of the exponential chart: column i holds the
    /// frame components of the coordinate field d/dx_i at chart point v.
    pub fn frame_matrix_chart(&self, v: &[f64]) -> DMatrix<f64> {
        let a = self.ad_of(v);
        if self.tau == 0.0 {
            // nilpotent: exact at first order
            return DMatrix::identity(self.dim, self.dim) - 0.5 * &a;
        }
        // ad_v satisfies A^3 = -w A with w = tau(x^2+y^2) + tau^2 z^2
        let w = self.tau * (v[0] * v[0] + v[1] * v[1]) + self.tau * self.tau * v[2] * v[2];
        let c1 = dpsi(-w, 1.0); // (1 - cos sqrt(w))/w, series-safe
        let c2 = psi(-w, 1.0); // (sqrt(w) - sin sqrt(w))/w^{3/2}
        DMatrix::identity(self.dim, self.dim) - c1 * &a + c2 * (&a * &a)
    }

    /// Riemannian volume density of mu = vol_g with respect to Lebesgue
    /// measure in the exponential chart.
    pub fn mu_density_chart(&self, v: &[f64]) -> f64 {
        self.frame_matrix_chart(v).determinant().abs()
    }

    /// g_eps metric matrix in chart coordinates.
    pub fn metric_chart(&self, eps: f64, v: &[f64]) -> DMatrix<f64> {
        let b = self.frame_matrix_chart(v);
        let mut d = DMatrix::identity(self.dim, self.dim);
        d[(self.n, self.n)] = 1.0 / eps;
        b.transpose() * d * b
    }

    /// Squared ad-eigenvalue parameter of a chart point; the chart is valid
    /// for omega < 2 pi, i.e. omega_sq < 4 pi^2.
    pub fn omega_sq_chart(&self, v: &[f64]) -> f64 {
        if self.tau == 0.0 {
            0.0
        } else {
            self.tau * (v[0] * v[0] + v[1] * v[1]) + self.tau * self.tau * v[2] * v[2]
        }
    }

    pub fn chart_to_pos(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ModelKind::Heisenberg => Ok(v.to_vec()),
            ModelKind::HopfSphere => {
                // algebra element x*i + y*j - 2z*k as a quaternion
                let a = [v[0], v[1], -2.0 * v[2]];
                let th = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                if th >= std::f64::consts::PI {
                    return Err(Error::ChartWindow { omega: 2.0 * th });
                }
                let sc = if th < 1e-150 { 1.0 } else { th.sin() / th };
                Ok(vec![th.cos(), sc * a[0], sc * a[1], sc * a[2]])
            }
            ModelKind::AntiDeSitter => {
                // m = x B1 + y B2 + 2z J0, m^2 = delta I, delta = x^2+y^2-4z^2
                let (x, y, z) = (v[0], v[1], v[2]);
                let delta = x * x + y * y - 4.0 * z * z;
                if delta < 0.0 && (-delta).sqrt() >= std::f64::consts::PI {
                    return Err(Error::ChartWindow { omega: 2.0 * (-delta).sqrt() });
                }
                let (c, s) = cosh_sinc(delta);
                // exp(m) = c I + s m with m = [[x, y-2z],[y+2z, -x]]
                Ok(vec![c + s * x, s * (y - 2.0 * z), s * (y + 2.0 * z), c - s * x])
            }
        }
    }

    pub fn pos_to_chart(&self, p: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ModelKind::Heisenberg => Ok(p.to_vec()),
            ModelKind::HopfSphere => {
                let nrm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3]).sqrt();
                let q: Vec<f64> = p.iter().map(|c| c / nrm).collect();
                let vn = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                let th = vn.atan2(q[0]);
                if th >= std::f64::consts::PI - 1e-12 {
                    return Err(Error::ChartWindow { omega: 2.0 * th });
                }
                let sc = if vn < 1e-150 { 1.0 } else { th / vn };
                let a = [sc * q[1], sc * q[2], sc * q[3]];
                Ok(vec![a[0], a[1], -0.5 * a[2]])
            }
            ModelKind::AntiDeSitter => {
                let det = p[0] * p[3] - p[1] * p[2];
                let sc = 1.0 / det.sqrt();
                let g: Vec<f64> = p.iter().map(|c| c * sc).collect();
                let c = 0.5 * (g[0] + g[3]);
                if c <= -1.0 + 1e-12 {
                    return Err(Error::ChartWindow { omega: 2.0 * std::f64::consts::PI });
                }
                // invert c = cosh_sinc(delta).0
                let delta = if c >= 1.0 {
                    let t = c.max(1.0);
                    let r = (t + (t * t - 1.0).sqrt()).ln(); // acosh
                    r * r
                } else {
                    let r = c.acos();
                    -(r * r)
                };
                let (_, s) = cosh_sinc(delta);
                let half = 0.5 * (g[0] - g[3]);
                let x = half / s;
                let m01 = g[1] / s;
                let m10 = g[2] / s;
                Ok(vec![x, 0.5 * (m01 + m10), 0.25 * (m10 - m01)])
            }
        }
    }

    /// Time derivative of the position representation given frame velocity u.
    pub fn pos_step(&self, p: &[f64], u: &DVector<f64>, out: &mut [f64]) {
        match self.kind {
            ModelKind::Heisenberg => {
                // chart velocity = (I + A/2) u since B = I - A/2, A^2 = 0
                let d = self.n / 2;
                for i in 0..self.dim {
                    out[i] = u[i];
                }
                // A u has only an S-component: sum_i (y_i u_xi - x_i u_yi)
                let mut acc = 0.0;
                for i in 0..d {
                    acc += p[d + i] * u[i] - p[i] * u[d + i];
                }
                out[self.n] += 0.5 * acc;
            }
            ModelKind::HopfSphere => {
                // q' = q * (u0 i + u1 j - 2 u2 k)
                let (qw, qx, qy, qz) = (p[0], p[1], p[2], p[3]);
                let (ax, ay, az) = (u[0], u[1], -2.0 * u[2]);
                out[0] = -qx * ax - qy * ay - qz * az;
                out[1] = qw * ax + qy * az - qz * ay;
                out[2] = qw * ay + qz * ax - qx * az;
                out[3] = qw * az + qx * ay - qy * ax;
            }
            ModelKind::AntiDeSitter => {
                // g' = g * m(u), m = [[u0, u1 - 2u2],[u1 + 2u2, -u0]]
                let (m00, m01, m10, m11) = (u[0], u[1] - 2.0 * u[2], u[1] + 2.0 * u[2], -u[0]);
                out[0] = p[0] * m00 + p[1] * m10;
                out[1] = p[0] * m01 + p[1] * m11;
                out[2] = p[2] * m00 + p[3] * m10;
                out[3] = p[2] * m01 + p[3] * m11;
            }
        }
    }

    /// Closed-form geodesic flow for the curved models: the velocity rotates
    /// at the constant rate Omega = u_S (1/eps - tau) (the charge for
    /// eps = 0), and since the J-rotation of horizontal vectors is
    /// Ad(exp(s S)), the flow factorizes into two one-parameter subgroups
    ///     p(t) = p0 exp(t (a(w) - D)) exp(t D),   D = (Omega/tau) S.
    /// Validated against the integrator (exp_eps stays numeric).
    pub fn flow_closed(&self, eps: f64, pos0: &[f64], w: &DVector<f64>, charge: f64, t: f64) -> Vec<f64> {
        debug_assert!(self.tau != 0.0, "flow_closed is for the curved models");
        let omega = if eps > 0.0 { w[self.n] * (1.0 / eps - self.tau) } else { -self.sr_sign * charge };
        let d_coeff = omega / self.tau;
        // algebra coordinates (x, y, z) of a(w) - D and D
        let a_minus_d = [w[0] * t, w[1] * t, (w[self.n] - d_coeff) * t];
        let d = [0.0, 0.0, d_coeff * t];
        match self.kind {
            ModelKind::HopfSphere => {
                let q1 = quat_exp(&a_minus_d);
                let q2 = quat_exp(&d);
                quat_mul(&quat_mul(pos0, &q1), &q2)
            }
            ModelKind::AntiDeSitter => {
                let g1 = sl2_exp(&a_minus_d);
                let g2 = sl2_exp(&d);
                mat2_mul(&mat2_mul(pos0, &g1), &g2)
            }
            ModelKind::Heisenberg => unreachable!(),
        }
    }

    /// Algebra coordinates of log(p^{-1} q): the shooting residual. Zero iff
    /// the positions coincide (within the chart window).
    pub fn pos_log(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ModelKind::Heisenberg => {
                let d = self.n / 2;
                let mut out = vec![0.0; self.dim];
                for i in 0..self.dim {
                    out[i] = q[i] - p[i];
                }
                let mut corr = 0.0;
                for i in 0..d {
                    corr += p[d + i] * q[i] - p[i] * q[d + i];
                }
                out[self.n] -= 0.5 * corr;
                Ok(out)
            }
            ModelKind::HopfSphere => {
                // rel = conj(p) * q
                let rel = quat_mul(&[p[0], -p[1], -p[2], -p[3]], q);
                self.pos_to_chart(&rel)
            }
            ModelKind::AntiDeSitter => {
                let det = p[0] * p[3] - p[1] * p[2];
                let pinv = [p[3] / det, -p[1] / det, -p[2] / det, p[0] / det];
                let rel = [
                    pinv[0] * q[0] + pinv[1] * q[2],
                    pinv[0] * q[1] + pinv[1] * q[3],
                    pinv[2] * q[0] + pinv[3] * q[2],
                    pinv[2] * q[1] + pinv[3] * q[3],
                ];
                self.pos_to_chart(&rel)
            }
        }
    }
}

fn cosh_sinc(delta: f64) -> (f64, f64) {
    // (cosh sqrt(delta), sinh sqrt(delta)/sqrt(delta)) continued through 0
    if delta.abs() < 1e-8 {
        (1.0 + delta / 2.0 + delta * delta / 24.0, 1.0 + delta / 6.0 + delta * delta / 120.0)
    } else if delta > 0.0 {
        let s = delta.sqrt();
        (s.cosh(), s.sinh() / s)
    } else {
        let s = (-delta).sqrt();
        (s.cos(), s.sin() / s)
    }
}

fn quat_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// exp of the algebra element with coordinates (x, y, z) as a unit quaternion
/// (Hopf embedding X = i, Y = j, S = -2k).
fn quat_exp(v: &[f64; 3]) -> Vec<f64> {
    let a = [v[0], v[1], -2.0 * v[2]];
    let th = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let sc = if th < 1e-150 { 1.0 } else { th.sin() / th };
    vec![th.cos(), sc * a[0], sc * a[1], sc * a[2]]
}

/// exp of the algebra element with coordinates (x, y, z) in SL(2, R)
/// (AdS embedding X = B1, Y = B2, S = 2 J0).
fn sl2_exp(v: &[f64; 3]) -> Vec<f64> {
    let (x, y, z) = (v[0], v[1], v[2]);
    let delta = x * x + y * y - 4.0 * z * z;
    let (c, s) = cosh_sinc(delta);
    vec![c + s * x, s * (y - 2.0 * z), s * (y + 2.0 * z), c - s * x]
}

fn mat2_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}
