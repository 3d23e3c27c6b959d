//! Jacobi fields for the adjoint connection along integrated arcs: parallel
//! transport, propagation of the coupled (horizontal, Reeb) system, the
//! closed-form constant-curvature fields, index forms, Hessians of the
//! distance, and conjugate-point detection.
//!
//! Conventions: along an arc gamma, Y' denotes the covariant derivative with
//! respect to the adjoint connection nabla-hat^eps; the Jacobi equation is
//! nabla-hat (nabla^eps Y) = R-hat(gamma', Y) gamma'. Propagation runs in the
//! adapted left-invariant frame (where the curvature has constant
//! coefficients); parallel-frame components come from a transported frame.

use nalgebra::{DMatrix, DVector};

use crate::geodesics::GeodesicArc;
use crate::kernels::{ddpsi, dphi, dpsi, phi, psi};
use crate::models::ModelSpace;
use crate::ode::{solve, OdeOptions, OdeSolution};
use crate::quad::gauss_legendre_panels;
use crate::{Error, Result};

/// Which connection a transported frame is parallel for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    /// nabla^eps (metric, does not preserve the splitting)
    Eps,
    /// nabla-hat^eps (metric, preserves the splitting; the workhorse)
    Hat,
    /// nabla-hat^{2eps} (the frames of the expanded horizontal index form)
    Hat2Eps,
}

/// A frame E(t) transported along an arc, with dense output.
pub struct Transport {
    pub connection: Connection,
    dim: usize,
    sol: OdeSolution,
}

impl Transport {
    pub fn matrix_at(&self, t: f64) -> DMatrix<f64> {
        let y = self.sol.eval(t);
        DMatrix::from_column_slice(self.dim, self.dim, &y)
    }

    pub fn to_parallel(&self, t: f64, v_adapted: &DVector<f64>) -> DVector<f64> {
        self.matrix_at(t).lu().solve(v_adapted).expect("transport frame is invertible")
    }

    pub fn to_adapted(&self, t: f64, v_parallel: &DVector<f64>) -> DVector<f64> {
        self.matrix_at(t) * v_parallel
    }
}

/// Transport the adapted frame at gamma(0) along the arc.
pub fn transport(arc: &GeodesicArc, connection: Connection) -> Result<Transport> {
    if arc.eps <= 0.0 {
        return Err(Error::NonPositiveEps(arc.eps));
    }
    let m = arc.model.clone();
    let dim = m.dim;
    let eps = match connection {
        Connection::Eps | Connection::Hat => arc.eps,
        Connection::Hat2Eps => 2.0 * arc.eps,
    };
    let arc2 = arc.clone();
    let conn = connection;
    let y0: Vec<f64> = DMatrix::<f64>::identity(dim, dim).as_slice().to_vec();
    let sol = solve(
        move |t, y, dy| {
            let u = arc2.velocity_at(t);
            let g = match conn {
                Connection::Eps => m.gamma_eps_matrix(eps, &u),
                Connection::Hat | Connection::Hat2Eps => m.gamma_hat_matrix(eps, &u),
            };
            let e = DMatrix::from_column_slice(dim, dim, y);
            let de = -&g * e;
            dy.copy_from_slice(de.as_slice());
        },
        0.0,
        arc.time,
        &y0,
        OdeOptions::default(),
    )?;
    Ok(Transport { connection, dim, sol })
}

/// One propagated Jacobi field along an arc, stored as adapted-frame
/// components of (Y, P = nabla^eps_{gamma'} Y).
pub struct JacobiField {
    pub eps: f64,
    dim: usize,
    sol: OdeSolution,
    arc_time: f64,
}

impl JacobiField {
    pub fn y_at(&self, t: f64) -> DVector<f64> {
        let s = self.sol.eval(t);
        DVector::from_column_slice(&s[..self.dim])
    }

    /// nabla^eps-derivative components.
    pub fn p_at(&self, t: f64) -> DVector<f64> {
        let s = self.sol.eval(t);
        DVector::from_column_slice(&s[self.dim..])
    }

    /// Y' = nabla-hat^eps derivative = P + T-hat(gamma', Y).
    pub fn yprime_at(&self, arc: &GeodesicArc, t: f64) -> DVector<f64> {
        let u = arc.velocity_at(t);
        let y = self.y_at(t);
        self.p_at(t) + arc.model.torsion_hat(self.eps, &u, &y)
    }

    pub fn time(&self) -> f64 {
        self.arc_time
    }

    /// Sup over a dense grid of the Jacobi-equation residual, evaluated by
    /// finite differences of the propagated components (independent of the
    /// integrator's internal error control).
    pub fn equation_residual(&self, arc: &GeodesicArc) -> f64 {
        let m = &arc.model;
        let h = arc.time * 1e-5;
        let mut worst: f64 = 0.0;
        for i in 1..40 {
            let t = arc.time * i as f64 / 40.0;
            let t = t.min(arc.time - h);
            let u = arc.velocity_at(t);
            // nabla-hat P by centered differences of components plus Gamma-hat
            let pp = self.p_at(t + h);
            let pm = self.p_at(t - h);
            let dp = (&pp - &pm) / (2.0 * h);
            let hat = dp + m.gamma_hat_matrix(self.eps, &u) * self.p_at(t);
            let rhs = m.riem_adjoint(self.eps, &u, &self.y_at(t), &u).expect("eps > 0");
            worst = worst.max((hat - rhs).norm());
        }
        worst
    }
}

/// Propagate the Jacobi field with Y(0) = y0 and Y'(0) = dy0 (adjoint
/// derivative), both in adapted frame components at gamma(0).
pub fn jacobi_propagate(arc: &GeodesicArc, y0: &DVector<f64>, dy0: &DVector<f64>) -> Result<JacobiField> {
    if arc.eps <= 0.0 {
        return Err(Error::NonPositiveEps(arc.eps));
    }
    let eps = arc.eps;
    let m = arc.model.clone();
    let dim = m.dim;
    let arc2 = arc.clone();
    // P(0) = Y'(0) - T-hat(gamma'(0), Y(0))
    let u0 = arc.velocity_at(0.0);
    let p0 = dy0 - m.torsion_hat(eps, &u0, y0);
    let mut state = y0.as_slice().to_vec();
    state.extend(p0.iter());
    let sol = solve(
        move |t, y, dy| {
            let u = arc2.velocity_at(t);
            let yv = DVector::from_column_slice(&y[..dim]);
            let pv = DVector::from_column_slice(&y[dim..]);
            // y' = P - Gamma^eps[u] y
            let dyv = &pv - m.gamma_eps_matrix(eps, &u) * &yv;
            // P' = R-hat(u, y)u - Gamma-hat[u] P
            let rhs = m.riem_adjoint(eps, &u, &yv, &u).expect("eps > 0");
            let dpv = rhs - m.gamma_hat_matrix(eps, &u) * &pv;
            dy[..dim].copy_from_slice(dyv.as_slice());
            dy[dim..].copy_from_slice(dpv.as_slice());
        },
        0.0,
        arc.time,
        &state,
        OdeOptions::default(),
    )?;
    Ok(JacobiField { eps, dim, sol, arc_time: arc.time })
}

/// The fundamental system: all dim solutions with Y(0) = 0, Y'(0) = e_a,
/// reused for every boundary-value Hessian along the arc.
pub struct JacobiBasis {
    pub arc: GeodesicArc,
    pub fields: Vec<JacobiField>,
}

impl JacobiBasis {
    pub fn new(arc: &GeodesicArc) -> Result<Self> {
        let dim = arc.model.dim;
        let zero = DVector::zeros(dim);
        let mut fields = Vec::with_capacity(dim);
        for a in 0..dim {
            let mut e = DVector::zeros(dim);
            e[a] = 1.0;
            fields.push(jacobi_propagate(arc, &zero, &e)?);
        }
        Ok(JacobiBasis { arc: arc.clone(), fields })
    }

    fn end_matrices(&self, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let dim = self.arc.model.dim;
        let mut fy = DMatrix::zeros(dim, dim);
        let mut fp = DMatrix::zeros(dim, dim);
        for (a, f) in self.fields.iter().enumerate() {
            fy.set_column(a, &f.y_at(t));
            fp.set_column(a, &f.yprime_at(&self.arc, t));
        }
        (fy, fp)
    }

    /// Hessian of the distance from gamma(0), evaluated at the arc endpoint
    /// on the tangent vector v (adapted components). The component of v along
    /// gamma' is projected out (the g_eps Levi-Civita Hessian is degenerate
    /// there); on horizontal and vertical directions all the Hessians in play
    /// coincide. Requires a unit-speed arc.
    pub fn hessian(&self, v: &DVector<f64>) -> Result<f64> {
        let arc = &self.arc;
        let m = &arc.model;
        let t = arc.time;
        debug_assert!((arc.speed - 1.0).abs() < 1e-8, "hessian needs a unit-speed arc");
        let gend = arc.velocity_at(t);
        let vbar = v - m.g_eps_inner(arc.eps, v, &gend) * &gend;
        if vbar.norm() < 1e-14 {
            return Ok(0.0);
        }
        let (fy, fp) = self.end_matrices(t);
        let svd = fy.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin < 1e-9 * smax {
            return Err(Error::ConjugateSingularity { sigma_min: smin });
        }
        let c = svd.solve(&vbar, 0.0).map_err(|_| Error::ConjugateSingularity { sigma_min: smin })?;
        let yp = fp * c;
        Ok(m.g_eps_inner(arc.eps, &vbar, &yp))
    }

    /// Horizontal and vertical Laplacians of the distance at the endpoint:
    /// trace of the Hessian over the adapted horizontal frame, and the
    /// vertical diagonal entry (g-unit Reeb direction).
    pub fn laplacians(&self) -> Result<(f64, f64)> {
        let m = &self.arc.model;
        let mut lap_h = 0.0;
        for i in 0..m.n {
            lap_h += self.hessian(&m.basis(i))?;
        }
        let lap_v = self.hessian(&m.basis(m.n))?;
        Ok((lap_h, lap_v))
    }

    /// d/dr log A along the arc at the endpoint, where A is the transverse
    /// Jacobi volume density: the independent route to the full Laplacian
    /// Delta_eps r = Delta_H r + eps Delta_V r.
    pub fn laplacian_density_route(&self) -> Result<f64> {
        let arc = &self.arc;
        let m = &arc.model;
        let eps = arc.eps;
        let t = arc.time;
        // g_eps-orthonormal basis of gamma'(0)^perp by Gram-Schmidt
        let u0 = arc.velocity_at(0.0);
        let mut basis: Vec<DVector<f64>> = vec![u0.clone()];
        for a in 0..m.dim {
            let mut v = m.basis(a);
            for b in &basis {
                v -= m.g_eps_inner(eps, &v, b) * b;
            }
            let n = m.g_eps_inner(eps, &v, &v).sqrt();
            if n > 1e-8 {
                basis.push(v / n);
            }
        }
        let transverse = &basis[1..];
        debug_assert_eq!(transverse.len(), m.dim - 1);
        let tr = transport(arc, Connection::Hat)?;
        let e_t = tr.matrix_at(t);
        let e_лu = e_t.clone().lu();
        // propagate Y(0) = 0, Y'(0) = f_i; express components in the
        // transported frame of the same transverse basis
        let zero = DVector::zeros(m.dim);
        let mut ymat = DMatrix::zeros(m.dim - 1, m.dim - 1);
        let mut ypmat = DMatrix::zeros(m.dim - 1, m.dim - 1);
        for (i, f0) in transverse.iter().enumerate() {
            let jf = jacobi_propagate(arc, &zero, f0)?;
            // parallel components of Y and Y'
            let yc = e_лu.solve(&jf.y_at(t)).expect("frame invertible");
            let pc = e_лu.solve(&jf.yprime_at(arc, t)).expect("frame invertible");
            // coordinates in the parallel transverse basis: parallel frame is
            // g_eps-isometric, so take g_eps inner products at time 0
            for (j, fj) in transverse.iter().enumerate() {
                ymat[(j, i)] = m.g_eps_inner(eps, &yc, fj);
                ypmat[(j, i)] = m.g_eps_inner(eps, &pc, fj);
            }
        }
        // d/dt log det Y = tr(Y^{-1} Y')
        let ylu = ymat.lu();
        let sol = ylu.solve(&ypmat).ok_or(Error::ConjugateSingularity { sigma_min: 0.0 })?;
        Ok(sol.trace())
    }
}

/// Index form I(gamma, Y, Y) by composite quadrature over the arc's dense
/// panels. The field callback returns adapted components of (Y, Y') at t.
pub fn index_form(arc: &GeodesicArc, field: &dyn Fn(f64) -> (DVector<f64>, DVector<f64>)) -> f64 {
    let m = &arc.model;
    let eps = arc.eps;
    let integrand = |t: f64| {
        let u = arc.velocity_at(t);
        let (y, yp) = field(t);
        // nabla^eps Y = Y' - T-hat(gamma', Y)
        let py = &yp - m.torsion_hat(eps, &u, &y);
        let a = m.g_eps_inner(eps, &py, &yp);
        let r = m.riem_adjoint(eps, &u, &y, &y).expect("eps > 0");
        a - m.g_eps_inner(eps, &r, &u)
    };
    let breaks = refine_breaks(arc.knot_times(), arc.time, 160);
    gauss_legendre_panels(&integrand, &breaks)
}

/// The expanded horizontal index form of the horizontal/vertical index
/// formula (valid for horizontal fields): |nabla-hat^{2eps} Y|^2 plus
/// curvature, torsion and -(1/4 eps^2)|J_{gamma'} Y|^2 terms.
pub fn index_form_expanded_horizontal(
    arc: &GeodesicArc,
    field: &dyn Fn(f64) -> (DVector<f64>, DVector<f64>),
) -> f64 {
    let m = &arc.model;
    let eps = arc.eps;
    let integrand = |t: f64| {
        let u = arc.velocity_at(t);
        let (y, yp) = field(t);
        // nabla-hat^{2eps} Y = Y' - (1/(2 eps)) J_{gamma'} Y
        let ju_y = m.j_of(&u, &y);
        let hat2 = &yp - &ju_y / (2.0 * eps);
        let t_uy = m.torsion_coeffs(&u, &y);
        let nabla_t_term = m.g_inner(&m.nabla_t(&y, &y, &u), &u);
        m.g_inner(&hat2, &hat2) - m.g_inner(&m.riem_coeffs(&u, &y, &y), &u)
            + (nabla_t_term + m.g_inner(&t_uy, &t_uy)) / eps
            - m.g_inner(&ju_y, &ju_y) / (4.0 * eps * eps)
    };
    let breaks = refine_breaks(arc.knot_times(), arc.time, 160);
    gauss_legendre_panels(&integrand, &breaks)
}

fn refine_breaks(knots: &[f64], t_end: f64, min_panels: usize) -> Vec<f64> {
    // integrator knots, subdivided so quadrature panels stay short
    let target = t_end / min_panels as f64;
    let mut out = Vec::with_capacity(min_panels + knots.len());
    out.push(0.0);
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1].min(t_end));
        if b <= a {
            continue;
        }
        let sub = ((b - a) / target).ceil().max(1.0) as usize;
        for i in 1..=sub {
            out.push(a + (b - a) * i as f64 / sub as f64);
        }
    }
    if *out.last().unwrap() < t_end {
        out.push(t_end);
    }
    out
}

/// Which Appendix-2 closed form applies to an arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedFormCase {
    /// gamma'_H != 0, boundary vector orthogonal to gamma'_H and J gamma'_H.
    A,
    /// Horizontal geodesic, boundary value J gamma'(r).
    B,
    /// Vertical geodesic, horizontal boundary vector.
    C,
}

/// Closed-form Jacobi field on a constant-curvature model, evaluated in the
/// nabla-hat-parallel frame along the arc (components are constant vectors).
pub struct ClosedFormJacobi {
    pub case: ClosedFormCase,
    pub eps: f64,
    pub r: f64,
    /// Constant-curvature parameter of the model (k1 = k2 = k).
    pub k: f64,
    /// mu_gamma of case (a); unused otherwise.
    pub mu_gamma: f64,
    /// C_eps of case (b); unused otherwise.
    pub c_eps: f64,
    theta: f64,
    v0_par: DVector<f64>,
    jmat: DMatrix<f64>,
    s_index: usize,
    jg_par: DVector<f64>,
}

impl ClosedFormJacobi {
    /// Parallel components of (Y, Y') at parameter t.
    pub fn eval(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        match self.case {
            ClosedFormCase::A => {
                let r = self.r;
                let g = 0.5 * self.theta * (r - t);
                let (cs, sn) = (g.cos(), g.sin());
                let jv = &self.jmat * &self.v0_par;
                let scale = 1.0 / phi(self.mu_gamma, r);
                let y = scale * phi(self.mu_gamma, t) * (cs * &self.v0_par - sn * &jv);
                let dy = scale
                    * (dphi(self.mu_gamma, t) * (cs * &self.v0_par - sn * &jv)
                        + phi(self.mu_gamma, t) * (0.5 * self.theta) * (sn * &self.v0_par + cs * &jv));
                (y, dy)
            }
            ClosedFormCase::B => {
                let (r, k, eps) = (self.r, self.k, self.eps);
                let mu = -k;
                let c = self.c_eps;
                let f = (dpsi(mu, r) * dpsi(mu, t) + (eps * r - psi(mu, r)) * ddpsi(mu, t)) / c;
                let df = (dpsi(mu, r) * ddpsi(mu, t) + (eps * r - psi(mu, r)) * dphi(mu, t)) / c;
                let big_f = (dpsi(mu, r) * psi(mu, t) - psi(mu, r) * dpsi(mu, t)
                    + eps * (r * dpsi(mu, t) - t * dpsi(mu, r)))
                    / c;
                let dbig_f = (dpsi(mu, r) * dpsi(mu, t) - psi(mu, r) * ddpsi(mu, t)
                    + eps * (r * ddpsi(mu, t) - dpsi(mu, r)))
                    / c;
                let mut y = f * &self.jg_par;
                y[self.s_index] += big_f;
                let mut dy = df * &self.jg_par;
                dy[self.s_index] += dbig_f;
                (y, dy)
            }
            ClosedFormCase::C => {
                let (r, eps) = (self.r, self.eps);
                let se = eps.sqrt();
                let s = self.theta; // +-1
                let den = 2.0 * (1.0 - (r / se).cos());
                let a = (1.0 + ((r - t) / se).cos() - (r / se).cos() - (t / se).cos()) / den;
                let b = -s * (((r - t) / se).sin() - (r / se).sin() + (t / se).sin()) / den;
                let da = (((r - t) / se).sin() + (t / se).sin()) / (se * den);
                let db = -s * (-((r - t) / se).cos() + (t / se).cos()) / (se * den);
                let jv = &self.jmat * &self.v0_par;
                (a * &self.v0_par + b * &jv, da * &self.v0_par + db * &jv)
            }
        }
    }
}

/// Build the closed-form field for the given case along a unit-speed arc,
/// with boundary vector v0 at gamma(r) in adapted components (cases A and C;
/// case B's boundary value is J gamma'(r)).
pub fn closed_form(
    case: ClosedFormCase,
    arc: &GeodesicArc,
    tr: &Transport,
    v0: Option<&DVector<f64>>,
) -> Result<ClosedFormJacobi> {
    let m = &arc.model;
    let eps = arc.eps;
    if eps <= 0.0 {
        return Err(Error::NonPositiveEps(eps));
    }
    let r = arc.time * arc.speed;
    let k = m.k1;
    let u0 = arc.velocity_at(0.0);
    let uh = m.horizontal_part(&u0);
    let lam = uh.norm_squared();
    let theta = u0[m.n] / eps; // <S, gamma'>_{g_eps}
    match case {
        ClosedFormCase::A => {
            if lam < 1e-12 {
                return Err(Error::DegenerateInput("case A needs a nonvertical arc"));
            }
            let v0 = v0.ok_or(Error::DegenerateInput("case A needs a boundary vector"))?;
            // orthogonality window
            let u_end = arc.velocity_at(arc.time);
            let uh_end = m.horizontal_part(&u_end);
            let j_uh_end = m.j_coeffs(&uh_end);
            if v0[m.n].abs() > 1e-10
                || m.g_inner(v0, &uh_end).abs() > 1e-10
                || m.g_inner(v0, &j_uh_end).abs() > 1e-10
            {
                return Err(Error::DegenerateInput(
                    "case A boundary vector must be horizontal, orthogonal to gamma'_H and J gamma'_H",
                ));
            }
            let mu_gamma = (lam - 1.0) / (4.0 * eps) - lam * k;
            if mu_gamma < 0.0 {
                let window = std::f64::consts::PI / (-mu_gamma).sqrt();
                if r >= window {
                    return Err(Error::PastPole { what: "case A validity", pole: window, r });
                }
            }
            let v0_par = tr.to_parallel(arc.time, v0);
            Ok(ClosedFormJacobi {
                case,
                eps,
                r,
                k,
                mu_gamma,
                c_eps: 0.0,
                theta,
                v0_par,
                jmat: m.j_matrix().clone(),
                s_index: m.n,
                jg_par: DVector::zeros(m.dim),
            })
        }
        ClosedFormCase::B => {
            if (lam - 1.0).abs() > 1e-10 {
                return Err(Error::DegenerateInput("case B needs a horizontal arc"));
            }
            if k > 0.0 {
                let window = std::f64::consts::PI / k.sqrt();
                if r > window {
                    return Err(Error::PastPole { what: "case B validity", pole: window, r });
                }
            }
            let mu = -k;
            let c_eps = dpsi(mu, r).powi(2) - psi(mu, r) * ddpsi(mu, r) + eps * r * ddpsi(mu, r);
            if c_eps <= 0.0 {
                return Err(Error::DegenerateInput("case B constant C_eps must be positive"));
            }
            // J gamma' is parallel; its components equal J u(0)
            let jg_par = m.j_coeffs(&u0);
            Ok(ClosedFormJacobi {
                case,
                eps,
                r,
                k,
                mu_gamma: 0.0,
                c_eps,
                theta,
                v0_par: DVector::zeros(m.dim),
                jmat: m.j_matrix().clone(),
                s_index: m.n,
                jg_par,
            })
        }
        ClosedFormCase::C => {
            if lam > 1e-12 {
                return Err(Error::DegenerateInput("case C needs a vertical arc"));
            }
            if r >= 2.0 * std::f64::consts::PI * eps.sqrt() {
                return Err(Error::PastPole {
                    what: "case C validity",
                    pole: 2.0 * std::f64::consts::PI * eps.sqrt(),
                    r,
                });
            }
            let v0 = v0.ok_or(Error::DegenerateInput("case C needs a boundary vector"))?;
            if v0[m.n].abs() > 1e-10 {
                return Err(Error::DegenerateInput("case C boundary vector must be horizontal"));
            }
            let s = eps.sqrt() * theta; // +-1 for unit-speed vertical arcs
            let v0_par = tr.to_parallel(arc.time, v0);
            Ok(ClosedFormJacobi {
                case,
                eps,
                r,
                k,
                mu_gamma: 0.0,
                c_eps: 0.0,
                theta: s,
                v0_par,
                jmat: m.j_matrix().clone(),
                s_index: m.n,
                jg_par: DVector::zeros(m.dim),
            })
        }
    }
}

/// Hessian of the distance from x0 at x on the tangent vector v (adapted
/// frame components at x): solves the boundary problem, propagates the
/// fundamental Jacobi system along the unit-speed minimizer, and evaluates
/// the index form through its boundary term. Errors on cut-locus ambiguity
/// and on conjugate-point rank deficiency.
pub fn hessian_of_distance(
    model: &std::sync::Arc<ModelSpace>,
    eps: f64,
    x0: &[f64],
    x: &[f64],
    v: &DVector<f64>,
    seeds: usize,
) -> Result<f64> {
    let out = crate::shooting::solve_bvp(model, eps, x0, x, seeds)?;
    if out.ambiguous {
        return Err(Error::CutLocus("boundary problem has tied minimizers"));
    }
    let arc = out.arc_unit_speed()?;
    let basis = JacobiBasis::new(&arc)?;
    basis.hessian(v)
}

/// Zeros of the fundamental Jacobi determinant on (0, T]: conjugate times.
///
/// Zeros can have even multiplicity (whole J-plane blocks vanish together on
/// vertical arcs), so sign changes are not enough: the smallest singular
/// value of the fundamental matrix is scanned for dips and each candidate is
/// refined by ternary search.
pub fn conjugate_locator(basis: &JacobiBasis) -> Vec<f64> {
    let arc = &basis.arc;
    let dim = arc.model.dim;
    let sigma_min = |t: f64| {
        let mut fy = DMatrix::zeros(dim, dim);
        for (a, f) in basis.fields.iter().enumerate() {
            fy.set_column(a, &f.y_at(t));
        }
        fy.svd(false, false).singular_values.min()
    };
    let grid = 400;
    let t0 = arc.time * 2e-3;
    let ts: Vec<f64> = (0..=grid).map(|i| t0 + (arc.time - t0) * i as f64 / grid as f64).collect();
    let vals: Vec<f64> = ts.iter().map(|&t| sigma_min(t)).collect();
    let scale = vals.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut zeros = Vec::new();
    for i in 1..grid {
        if vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1] && vals[i] < 0.05 * scale {
            // ternary refinement of the dip
            let (mut a, mut b) = (ts[i - 1], ts[i + 1]);
            for _ in 0..80 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                if sigma_min(m1) < sigma_min(m2) {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            let t_star = 0.5 * (a + b);
            if sigma_min(t_star) < 1e-5 * scale {
                zeros.push(t_star);
            }
        }
    }
    zeros
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::exp_eps;
    use crate::models::{build_model, ModelKind};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit_arc(
        m: &Arc<ModelSpace>,
        eps: f64,
        dir: &DVector<f64>,
        r: f64,
    ) -> GeodesicArc {
        let n = m.g_eps_inner(eps, dir, dir).sqrt();
        let v = dir / n;
        exp_eps(m, eps, &vec![0.0; m.dim], &v, r).unwrap()
    }

    #[test]
    fn zero_data_propagates_to_zero_and_linearity() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let arc = unit_arc(&m, 0.7, &DVector::from_vec(vec![0.8, 0.1, 0.3]), 1.0);
        let zero = DVector::zeros(3);
        let jf = jacobi_propagate(&arc, &zero, &zero).unwrap();
        assert!(jf.y_at(1.0).norm() < 1e-14);
        // linearity on a random combination
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y0a = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let dy0a = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let y0b = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let dy0b = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let (ca, cb) = (0.37, -1.21);
        let ja = jacobi_propagate(&arc, &y0a, &dy0a).unwrap();
        let jb = jacobi_propagate(&arc, &y0b, &dy0b).unwrap();
        let jc = jacobi_propagate(&arc, &(ca * &y0a + cb * &y0b), &(ca * &dy0a + cb * &dy0b)).unwrap();
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let lin = ca * ja.y_at(t) + cb * jb.y_at(t);
            assert!((jc.y_at(t) - lin).norm() < 1e-9);
        }
    }

    #[test]
    fn radial_field_is_a_jacobi_field() {
        // Y = t gamma' solves the equation with Y(0) = 0, Y'(0) = gamma'(0)
        for kind in [ModelKind::Heisenberg, ModelKind::HopfSphere, ModelKind::AntiDeSitter] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let arc = unit_arc(&m, 0.5, &DVector::from_vec(vec![0.6, -0.2, 0.25]), 1.2);
            let jf = jacobi_propagate(&arc, &DVector::zeros(3), &arc.velocity_at(0.0)).unwrap();
            for i in 1..=5 {
                let t = 1.2 * i as f64 / 5.0;
                let expect = t * arc.velocity_at(t);
                assert!((jf.y_at(t) - expect).norm() < 1e-8, "{kind}");
            }
        }
    }

    #[test]
    fn propagated_equation_residual_is_small() {
        let m = Arc::new(build_model(ModelKind::AntiDeSitter, 2).unwrap());
        let arc = unit_arc(&m, 1.0, &DVector::from_vec(vec![0.4, 0.5, -0.3]), 1.1);
        let jf = jacobi_propagate(
            &arc,
            &DVector::from_vec(vec![0.2, -0.1, 0.05]),
            &DVector::from_vec(vec![-0.3, 0.7, 0.1]),
        )
        .unwrap();
        assert!(jf.equation_residual(&arc) < 1e-8);
    }

    #[test]
    fn transports_are_metric() {
        // derivatives of g_eps inner products of transported fields vanish
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [ModelKind::Heisenberg, ModelKind::HopfSphere] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let eps = 0.6;
            let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.5, 0.3, 0.4]), 1.3);
            for conn in [Connection::Eps, Connection::Hat] {
                let tr = transport(&arc, conn).unwrap();
                let a = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                let b = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                let g0 = m.g_eps_inner(eps, &a, &b);
                for i in 1..=6 {
                    let t = 1.3 * i as f64 / 6.0;
                    let e = tr.matrix_at(t);
                    let (ta, tb) = (&e * &a, &e * &b);
                    assert!((m.g_eps_inner(eps, &ta, &tb) - g0).abs() < 1e-9, "{kind} {conn:?}");
                }
            }
        }
    }

    fn sup_dist_closed_vs_ode(
        m: &Arc<ModelSpace>,
        arc: &GeodesicArc,
        case: ClosedFormCase,
        v0: Option<&DVector<f64>>,
    ) -> f64 {
        let tr = transport(arc, Connection::Hat).unwrap();
        let cf = closed_form(case, arc, &tr, v0).unwrap();
        // boundary data: Y(0) = 0, Y'(0) = closed form derivative at 0
        let (_, dy0) = cf.eval(0.0);
        let dy0_adapted = tr.to_adapted(0.0, &dy0);
        let jf = jacobi_propagate(arc, &DVector::zeros(m.dim), &dy0_adapted).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=40 {
            let t = arc.time * i as f64 / 40.0;
            let (yc, _) = cf.eval(t);
            let yo = tr.to_parallel(t, &jf.y_at(t));
            worst = worst.max((yc - yo).norm());
        }
        worst
    }

    #[test]
    fn closed_form_case_b_matches_ode_on_all_models() {
        for kind in [ModelKind::Heisenberg, ModelKind::HopfSphere, ModelKind::AntiDeSitter] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let arc = unit_arc(&m, 0.8, &DVector::from_vec(vec![0.6, 0.8, 0.0]), 1.2);
            let d = sup_dist_closed_vs_ode(&m, &arc, ClosedFormCase::B, None);
            assert!(d < 1e-7, "{kind}: {d}");
        }
    }

    #[test]
    fn closed_form_case_c_matches_ode() {
        for kind in [ModelKind::Heisenberg, ModelKind::HopfSphere, ModelKind::AntiDeSitter] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let eps = 0.9;
            let dir = DVector::from_vec(vec![0.0, 0.0, 1.0]);
            let arc = unit_arc(&m, eps, &dir, 0.8 * 2.0 * PI * eps.sqrt() * 0.5);
            let v0 = DVector::from_vec(vec![0.7, -0.4, 0.0]);
            let d = sup_dist_closed_vs_ode(&m, &arc, ClosedFormCase::C, Some(&v0));
            assert!(d < 1e-7, "{kind}: {d}");
        }
    }

    #[test]
    fn closed_form_case_a_matches_ode_on_h5() {
        let m = Arc::new(build_model(ModelKind::Heisenberg, 4).unwrap());
        let eps = 0.7;
        // arc in the (X1, Y1, S) block; boundary vector in the X2 direction
        let dir = DVector::from_vec(vec![0.6, 0.0, 0.2, 0.0, 0.35]);
        let arc = unit_arc(&m, eps, &dir, 1.1);
        let u_end = arc.velocity_at(arc.time);
        // X2 stays orthogonal to gamma'_H and J gamma'_H along this arc
        let mut v0 = DVector::zeros(5);
        v0[1] = 1.0;
        let uh = m.horizontal_part(&u_end);
        assert!(m.g_inner(&v0, &uh).abs() < 1e-12);
        let d = sup_dist_closed_vs_ode(&m, &arc, ClosedFormCase::A, Some(&v0));
        assert!(d < 1e-7, "{d}");
    }

    #[test]
    fn closed_form_boundary_conditions() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let arc = unit_arc(&m, 0.8, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.7);
        let tr = transport(&arc, Connection::Hat).unwrap();
        let cf = closed_form(ClosedFormCase::B, &arc, &tr, None).unwrap();
        let (y0, _) = cf.eval(0.0);
        assert!(y0.norm() < 1e-13);
        let (yr, _) = cf.eval(arc.time);
        // boundary value J gamma'(r) in parallel components = J u(0)
        let expect = m.j_coeffs(&arc.velocity_at(0.0));
        assert!((yr - expect).norm() < 1e-12);
    }

    #[test]
    fn case_b_flat_constant() {
        // k = 0: C_eps = r^4/12 + eps r^2
        let m = Arc::new(build_model(ModelKind::Heisenberg, 2).unwrap());
        let (eps, r) = (0.6, 1.4);
        let arc = unit_arc(&m, eps, &DVector::from_vec(vec![1.0, 0.0, 0.0]), r);
        let tr = transport(&arc, Connection::Hat).unwrap();
        let cf = closed_form(ClosedFormCase::B, &arc, &tr, None).unwrap();
        let expect = r.powi(4) / 12.0 + eps * r * r;
        assert!((cf.c_eps - expect).abs() < 1e-12);
    }

    #[test]
    fn index_form_radial_trial_gives_lambda_over_r() {
        for kind in [ModelKind::Heisenberg, ModelKind::HopfSphere, ModelKind::AntiDeSitter] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let r = 1.1;
            let arc = unit_arc(&m, 0.5, &DVector::from_vec(vec![0.7, 0.2, 0.35]), r);
            let lam = arc.lambda;
            let i = index_form(&arc, &|t| {
                let u = arc.velocity_at(t);
                let uh = arc.model.horizontal_part(&u);
                (t / r * &uh, 1.0 / r * uh.clone())
            });
            assert!((i - lam / r).abs() < 1e-9, "{kind}: {i} vs {}", lam / r);
        }
    }

    #[test]
    fn index_form_of_jacobi_equals_boundary_term() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let eps = 0.7;
        let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.5, -0.4, 0.3]), 0.9);
        let dy0 = DVector::from_vec(vec![0.3, 0.8, -0.2]);
        let jf = jacobi_propagate(&arc, &DVector::zeros(3), &dy0).unwrap();
        let i = index_form(&arc, &|t| (jf.y_at(t), jf.yprime_at(&arc, t)));
        let boundary = m.g_eps_inner(eps, &jf.y_at(0.9), &jf.yprime_at(&arc, 0.9));
        assert!((i - boundary).abs() < 1e-8, "{i} vs {boundary}");
    }

    #[test]
    fn index_form_vertical_case_c_cot_value() {
        // vertical arc, case-C Jacobi field: I = (1/(2 sqrt(eps))) cot(r/(2 sqrt(eps)))
        let m = Arc::new(build_model(ModelKind::Heisenberg, 2).unwrap());
        let eps = 1.0;
        let r = 2.0;
        let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.0, 0.0, 1.0]), r);
        let tr = transport(&arc, Connection::Hat).unwrap();
        let v0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let cf = closed_form(ClosedFormCase::C, &arc, &tr, Some(&v0)).unwrap();
        let i = index_form(&arc, &|t| {
            let (y, dy) = cf.eval(t);
            (tr.to_adapted(t, &y), tr.to_adapted(t, &dy))
        });
        let expect = 1.0 / (2.0 * eps.sqrt()) * (r / (2.0 * eps.sqrt())).tan().recip();
        assert!((i - expect).abs() < 1e-8, "{i} vs {expect}");
    }

    #[test]
    fn expanded_index_form_agrees_for_horizontal_fields() {
        for kind in [ModelKind::HopfSphere, ModelKind::AntiDeSitter, ModelKind::Heisenberg] {
            let m = Arc::new(build_model(kind, 2).unwrap());
            let arc = unit_arc(&m, 0.45, &DVector::from_vec(vec![0.8, 0.1, 0.2]), 1.0);
            let tr = transport(&arc, Connection::Hat2Eps).unwrap();
            // horizontal trial field: G(t)-scaled nabla-hat^{2eps}-parallel
            // transport of a horizontal vector (stays horizontal)
            let w0 = DVector::from_vec(vec![0.3, 0.9, 0.0]);
            let field = |t: f64| {
                let g = (t / arc.time).powi(2);
                let dg = 2.0 * t / (arc.time * arc.time);
                let e = tr.matrix_at(t);
                let w = &e * &w0;
                // Y = g w (nabla-hat^{2eps} w = 0), so
                // Y' = nabla-hat^eps Y = g' w + g (1/(2eps)) J_{gamma'} w
                let u = arc.velocity_at(t);
                let jw = arc.model.j_of(&u, &w);
                (g * &w, dg * &w + g / (2.0 * arc.eps) * jw)
            };
            let a = index_form(&arc, &field);
            let b = index_form_expanded_horizontal(&arc, &field);
            assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn hessian_radial_direction_vanishes_and_fd_cross_check() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let eps = 0.8;
        let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.55, -0.35, 0.4]), 0.8);
        let basis = JacobiBasis::new(&arc).unwrap();
        // radial direction
        let h = basis.hessian(&arc.velocity_at(0.8)).unwrap();
        assert!(h.abs() < 1e-10);
        // finite differences of the distance along exp curves (oracle)
        let x = arc.end_chart().unwrap();
        for v in [DVector::from_vec(vec![1.0, 0.0, 0.0]), DVector::from_vec(vec![0.0, 0.0, 1.0])] {
            let jres = basis.hessian(&v).unwrap();
            let h = 1e-3;
            let dd = |s: f64| {
                let c = exp_eps(&m, eps, &x, &v, s.abs()).unwrap();
                let y = if s >= 0.0 {
                    c.end_chart().unwrap()
                } else {
                    let vneg = -v.clone();
                    exp_eps(&m, eps, &x, &vneg, -s).unwrap().end_chart().unwrap()
                };
                crate::shooting::solve_bvp(&m, eps, &vec![0.0; 3], &y, 24).unwrap().length()
            };
            let fd = (dd(h) - 2.0 * 0.8 + dd(-h)) / (h * h);
            let denom = 1.0 + jres.abs();
            assert!(
                (fd - jres).abs() / denom < 2e-4,
                "v={v:?}: jacobi {jres} vs fd {fd}"
            );
        }
    }

    #[test]
    fn hessian_polarization_is_symmetric() {
        let m = Arc::new(build_model(ModelKind::AntiDeSitter, 2).unwrap());
        let arc = unit_arc(&m, 0.6, &DVector::from_vec(vec![0.7, 0.3, 0.2]), 0.9);
        let basis = JacobiBasis::new(&arc).unwrap();
        let hess_bilinear = |u: &DVector<f64>, v: &DVector<f64>| -> f64 {
            let huv = basis.hessian(&(u + v)).unwrap();
            let hu = basis.hessian(u).unwrap();
            let hv = basis.hessian(v).unwrap();
            0.5 * (huv - hu - hv)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let u = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let v = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let a = hess_bilinear(&u, &v);
            let b = hess_bilinear(&v, &u);
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn curvature_term_ignores_vertical_perturbations() {
        // the index-form curvature term depends only on horizontal parts
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let eps = 0.5;
        let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.6, 0.3, 0.3]), 1.0);
        let u = arc.velocity_at(0.4);
        let y = DVector::from_vec(vec![0.2, -0.7, 0.3]);
        let curv = |y: &DVector<f64>| {
            let r = m.riem_adjoint(eps, &u, y, y).unwrap();
            m.g_eps_inner(eps, &r, &u)
        };
        let mut y2 = y.clone();
        y2[2] += 0.9;
        assert!((curv(&y) - curv(&y2)).abs() < 1e-12);
    }

    #[test]
    fn conjugate_time_on_vertical_heisenberg_arc() {
        // first conjugate time along the vertical arc is 2 pi sqrt(eps)
        let m = Arc::new(build_model(ModelKind::Heisenberg, 2).unwrap());
        for eps in [1.0, 0.25] {
            let arc = unit_arc(&m, eps, &DVector::from_vec(vec![0.0, 0.0, 1.0]), 7.0 * eps.sqrt());
            let basis = JacobiBasis::new(&arc).unwrap();
            let zeros = conjugate_locator(&basis);
            assert!(!zeros.is_empty());
            let expect = 2.0 * PI * eps.sqrt();
            assert!(
                (zeros[0] - expect).abs() < 1e-6 * (1.0 + expect),
                "eps={eps}: {} vs {expect}",
                zeros[0]
            );
        }
        // horizontal straight arc: no conjugate points
        let arc = unit_arc(&m, 1.0, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 6.0);
        let basis = JacobiBasis::new(&arc).unwrap();
        assert!(conjugate_locator(&basis).is_empty());
    }

    #[test]
    fn hopf_first_conjugate_point_near_pi() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let arc = unit_arc(&m, 1.0, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 3.4);
        let basis = JacobiBasis::new(&arc).unwrap();
        let zeros = conjugate_locator(&basis);
        assert!(!zeros.is_empty());
        assert!(zeros[0] <= PI * 1.02, "{}", zeros[0]);
    }

    #[test]
    fn index_lemma_jacobi_minimizes() {
        let m = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let arc = unit_arc(&m, 0.6, &DVector::from_vec(vec![0.7, -0.2, 0.3]), 0.8);
        let tr = transport(&arc, Connection::Hat).unwrap();
        let dy0 = DVector::from_vec(vec![0.4, 0.6, -0.3]);
        let jf = jacobi_propagate(&arc, &DVector::zeros(3), &dy0).unwrap();
        let i_jacobi = index_form(&arc, &|t| (jf.y_at(t), jf.yprime_at(&arc, t)));
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let w0 = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let trial = |t: f64| {
                let s = (PI * t / arc.time).sin();
                let ds = PI / arc.time * (PI * t / arc.time).cos();
                let e = tr.matrix_at(t);
                let w = &e * &w0;
                (jf.y_at(t) + s * &w, jf.yprime_at(&arc, t) + ds * &w)
            };
            let i_trial = index_form(&arc, &trial);
            assert!(i_jacobi <= i_trial + 1e-9, "{i_jacobi} vs {i_trial}");
        }
    }
}
