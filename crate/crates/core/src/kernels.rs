//! Scalar comparison kernels and the rate/density functions built from them.
//!
//! The fundamental family is phi_mu, psi_mu, Psi_mu together with the
//! comparison rates F_Rie, F_Sas, the eps-interpolating Sasakian rate, and
//! the measure-contraction densities Phi, Xi, Theta. Every function switches
//! to a fixed-order Taylor series for |mu| r^2 < SERIES_SWITCH to avoid
//! cancellation near mu = 0; the two branches agree to ~1e-13 relative at the
//! switch point (tested).

use crate::quad::integrate_adaptive;
use crate::{Error, Result};

/// Taylor switchover threshold on q = mu * r^2.
pub const SERIES_SWITCH: f64 = 1e-4;

/// phi_mu(r): sinh(sqrt(mu) r)/sqrt(mu) for mu > 0, r at mu = 0,
/// sin(sqrt(-mu) r)/sqrt(-mu) for mu < 0.
pub fn phi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < SERIES_SWITCH {
        r * (1.0 + q * (1.0 / 6.0 + q * (1.0 / 120.0 + q * (1.0 / 5040.0 + q / 362880.0))))
    } else if mu > 0.0 {
        let u = mu.sqrt() * r;
        u.sinh() / mu.sqrt()
    } else {
        let u = (-mu).sqrt() * r;
        u.sin() / (-mu).sqrt()
    }
}

/// d/dr phi_mu(r).
pub fn dphi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < SERIES_SWITCH {
        1.0 + q * (1.0 / 2.0 + q * (1.0 / 24.0 + q * (1.0 / 720.0 + q / 40320.0)))
    } else if mu > 0.0 {
        (mu.sqrt() * r).cosh()
    } else {
        ((-mu).sqrt() * r).cos()
    }
}

/// psi_mu(r) = int_0^r int_0^s phi_mu; equals (sinh u - u)/mu^{3/2} type.
pub fn psi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < SERIES_SWITCH {
        r * r * r
            * (1.0 / 6.0 + q * (1.0 / 120.0 + q * (1.0 / 5040.0 + q * (1.0 / 362880.0 + q / 39916800.0))))
    } else if mu > 0.0 {
        let s = mu.sqrt();
        ((s * r).sinh() - s * r) / (mu * s)
    } else {
        let s = (-mu).sqrt();
        (s * r - (s * r).sin()) / (-mu * s)
    }
}

/// d/dr psi_mu(r).
pub fn dpsi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < SERIES_SWITCH {
        r * r * (1.0 / 2.0 + q * (1.0 / 24.0 + q * (1.0 / 720.0 + q * (1.0 / 40320.0 + q / 3628800.0))))
    } else if mu > 0.0 {
        ((mu.sqrt() * r).cosh() - 1.0) / mu
    } else {
        (1.0 - ((-mu).sqrt() * r).cos()) / (-mu)
    }
}

/// d^2/dr^2 psi_mu(r); identically phi_mu(r).
pub fn ddpsi(mu: f64, r: f64) -> f64 {
    phi(mu, r)
}

/// Psi_mu(r): (sqrt(mu) - tanh(sqrt(mu) r)/r)/mu^{3/2} for mu > 0, r^2/3 at
/// mu = 0, (tan(sqrt(-mu) r)/r - sqrt(-mu))/(-mu)^{3/2} for mu < 0.
pub fn psi_cap(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < SERIES_SWITCH {
        r * r
            * (1.0 / 3.0
                + q * (-2.0 / 15.0 + q * (17.0 / 315.0 + q * (-62.0 / 2835.0 + q * 1382.0 / 155925.0))))
    } else if mu > 0.0 {
        let s = mu.sqrt();
        (s - (s * r).tanh() / r) / (mu * s)
    } else {
        let s = (-mu).sqrt();
        ((s * r).tan() / r - s) / ((-mu) * s)
    }
}

/// Psi_mu(r) * phi'_mu(r) = (r phi' - phi)/(mu r): removable through the
/// tan poles, entire in (mu, r). The difference form cancels badly for small
/// q = mu r^2, so the series window here is wider (and longer) than for the
/// basic kernels.
pub fn psi_cap_times_dphi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < 0.5 {
        // sum_{k>=1} 2k/(2k+1)! q^{k-1} r^2
        r * r
            * (1.0 / 3.0
                + q * (1.0 / 30.0
                    + q * (1.0 / 840.0
                        + q * (1.0 / 45360.0
                            + q * (1.0 / 3991680.0
                                + q * (1.0 / 518918400.0 + q / 93405312000.0))))))
    } else {
        (r * dphi(mu, r) - phi(mu, r)) / (mu * r)
    }
}

/// Psi_mu(r/2) * phi_mu(r) = (r phi - 2 psi')/(mu r): removable through the
/// tan poles, entire in (mu, r).
pub fn psi_cap_half_times_phi(mu: f64, r: f64) -> f64 {
    let q = mu * r * r;
    if q.abs() < 0.5 {
        // sum_{k>=1} 2k/(2k+2)! q^{k-1} r^3
        r * r
            * r
            * (1.0 / 12.0
                + q * (1.0 / 180.0
                    + q * (1.0 / 6720.0
                        + q * (1.0 / 453600.0
                            + q * (1.0 / 47900160.0
                                + q * (1.0 / 7264857600.0 + q / 1494484992000.0))))))
    } else {
        (r * phi(mu, r) - 2.0 * dpsi(mu, r)) / (mu * r)
    }
}

/// Bundle of all six kernel values at (mu, r).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct KernelBundle {
    pub mu: f64,
    pub r: f64,
    pub phi: f64,
    pub dphi: f64,
    pub psi: f64,
    pub dpsi: f64,
    pub ddpsi: f64,
    pub psi_cap: f64,
}

pub fn kernel_bundle(mu: f64, r: f64) -> KernelBundle {
    KernelBundle {
        mu,
        r,
        phi: phi(mu, r),
        dphi: dphi(mu, r),
        psi: psi(mu, r),
        dpsi: dpsi(mu, r),
        ddpsi: ddpsi(mu, r),
        psi_cap: psi_cap(mu, r),
    }
}

/// First positive zero of phi_mu (infinite unless mu < 0).
pub fn phi_first_zero(mu: f64) -> f64 {
    if mu < 0.0 { std::f64::consts::PI / (-mu).sqrt() } else { f64::INFINITY }
}

/// First positive pole of Psi_mu (infinite unless mu < 0).
pub fn psi_cap_first_pole(mu: f64) -> f64 {
    if mu < 0.0 { std::f64::consts::PI / (2.0 * (-mu).sqrt()) } else { f64::INFINITY }
}

/// First pole of F_Rie(., k): pi/sqrt(k) for k > 0.
pub fn f_rie_pole(k: f64) -> f64 {
    if k > 0.0 { std::f64::consts::PI / k.sqrt() } else { f64::INFINITY }
}

/// First pole of F_Sas(., k): 2 pi/sqrt(k) for k > 0.
pub fn f_sas_pole(k: f64) -> f64 {
    if k > 0.0 { 2.0 * std::f64::consts::PI / k.sqrt() } else { f64::INFINITY }
}

/// F_Rie(r, k) = phi'_{-k}(r)/phi_{-k}(r).
pub fn f_rie(r: f64, k: f64) -> Result<f64> {
    let pole = f_rie_pole(k);
    if r <= 0.0 {
        return Err(Error::DegenerateInput("f_rie needs r > 0"));
    }
    if r >= pole {
        return Err(Error::PastPole { what: "F_Rie", pole, r });
    }
    Ok(dphi(-k, r) / phi(-k, r))
}

/// F_Sas(r, k) = (phi'_{-k}/phi_{-k})(r) * Psi_{-k}(r)/Psi_{-k}(r/2),
/// evaluated in the pole-cancelling form (r phi' - phi)/(r phi - 2 psi').
pub fn f_sas(r: f64, k: f64) -> Result<f64> {
    let pole = f_sas_pole(k);
    if r <= 0.0 {
        return Err(Error::DegenerateInput("f_sas needs r > 0"));
    }
    if r >= pole {
        return Err(Error::PastPole { what: "F_Sas", pole, r });
    }
    Ok(psi_cap_times_dphi(-k, r) / psi_cap_half_times_phi(-k, r))
}

/// Both comparison rates at once.
pub fn comparison_rates(r: f64, k: f64) -> Result<(f64, f64)> {
    Ok((f_rie(r, k)?, f_sas(r, k)?))
}

/// Inputs for the eps-interpolating Sasakian rate.
#[derive(Debug, Clone, Copy)]
pub struct EpsRateInputs {
    pub eps: f64,
    /// lambda = |grad_H r_eps|^2, in (0, 1].
    pub lambda: f64,
    /// kappa = lambda * k1.
    pub kappa: f64,
    pub r: f64,
}

/// First zero of the eps_sas_rate denominator lambda*Psi_{-kappa}(r/2)*phi + eps*phi
/// (the regularity window). Infinite for kappa <= 0.
pub fn eps_rate_window(eps: f64, lambda: f64, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return f64::INFINITY;
    }
    let den = |r: f64| lambda * psi_cap_half_times_phi(-kappa, r) + eps * phi(-kappa, r);
    first_zero_by_scan(den, 2.0 * std::f64::consts::PI / kappa.sqrt())
}

/// (phi'_{-kappa}/phi_{-kappa})(r) * (lambda Psi_{-kappa}(r) + eps)/(lambda Psi_{-kappa}(r/2) + eps).
pub fn eps_sas_rate(inp: EpsRateInputs) -> Result<f64> {
    let EpsRateInputs { eps, lambda, kappa, r } = inp;
    if r <= 0.0 {
        return Err(Error::DegenerateInput("eps_sas_rate needs r > 0"));
    }
    let pole = eps_rate_window(eps, lambda, kappa);
    if r >= pole {
        return Err(Error::PastPole { what: "eps_sas_rate", pole, r });
    }
    let num = lambda * psi_cap_times_dphi(-kappa, r) + eps * dphi(-kappa, r);
    let den = lambda * psi_cap_half_times_phi(-kappa, r) + eps * phi(-kappa, r);
    Ok(num / den)
}

/// First zero of the Xi denominator phi_{-k}(r)(eps r - psi_{-k}(r)) + psi'_{-k}(r)^2.
pub fn xi_positivity_window(eps: f64, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return f64::INFINITY;
    }
    let den = |r: f64| phi(-kappa, r) * (eps * r - psi(-kappa, r)) + dpsi(-kappa, r).powi(2);
    first_zero_by_scan(den, 2.0 * std::f64::consts::PI / kappa.sqrt())
}

/// Xi_{eps,kappa}(r): the vertical comparison rate.
pub fn xi(eps: f64, kappa: f64, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::DegenerateInput("xi needs r > 0"));
    }
    let window = xi_positivity_window(eps, kappa);
    if r >= window {
        return Err(Error::PastPole { what: "Xi", pole: window, r });
    }
    let den = phi(-kappa, r) * (eps * r - psi(-kappa, r)) + dpsi(-kappa, r).powi(2);
    Ok(phi(-kappa, r) / den)
}

/// log of the canonical Phi_{eps,lambda,kappa}, defined by its logarithmic
/// derivative d/dr log Phi = eps_sas_rate with Phi(1) = 1.
pub fn log_phi_canonical(eps: f64, lambda: f64, kappa: f64, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::DegenerateInput("log_phi_canonical needs r > 0"));
    }
    let window = eps_rate_window(eps, lambda, kappa);
    if r >= window {
        return Err(Error::PastPole { what: "canonical Phi", pole: window, r });
    }
    let rate = |s: f64| {
        let num = lambda * psi_cap_times_dphi(-kappa, s) + eps * dphi(-kappa, s);
        let den = lambda * psi_cap_half_times_phi(-kappa, s) + eps * phi(-kappa, s);
        num / den
    };
    Ok(integrate_adaptive(&rate, 1.0, r, 1e-12))
}

/// The paper's closed form for Phi in the kappa != 0 branch (cross-check only;
/// matches the canonical Phi up to a kappa-dependent constant).
pub fn phi_mcp_closed_nonzero_kappa(eps: f64, lambda: f64, kappa: f64, r: f64) -> f64 {
    lambda * (2.0 / kappa * (1.0 - dphi(-kappa, r)) - r * phi(-kappa, r)) + eps * phi(-kappa, r)
}

/// The paper's closed form for Phi in the kappa = 0 branch (cross-check only).
pub fn phi_mcp_closed_flat(eps: f64, lambda: f64, r: f64) -> f64 {
    r * (lambda * r * r + 12.0 * eps).powf(1.5)
}

/// The MCP density triple (canonical Phi, Xi, Theta) at radius r.
///
/// Theta's reference point is fixed to c = 1; only ratios Theta(t r)/Theta(r)
/// enter the contraction bound, which are reference-independent. The
/// phi^{n-2} factor shares kappa with Phi and Xi: the supported models have
/// k1 = k2, so the two curvature slots coincide.
pub fn mcp_densities(eps: f64, lambda: f64, kappa: f64, r: f64, n: usize) -> Result<(f64, f64, f64)> {
    let phi_eps = log_phi_canonical(eps, lambda, kappa, r)?.exp();
    let xi_val = xi(eps, kappa, r)?;
    let theta = theta_log(eps, lambda, kappa, n, r)?.exp();
    Ok((phi_eps, xi_val, theta))
}

/// log Theta(lambda, r) with reference point c = 1.
pub fn theta_log(eps: f64, lambda: f64, kappa: f64, n: usize, r: f64) -> Result<f64> {
    let exponent = (1.0 / lambda - 1.0).min(1.0);
    let xi_window = xi_positivity_window(eps, kappa);
    if r >= xi_window {
        return Err(Error::PastPole { what: "Theta (Xi factor)", pole: xi_window, r });
    }
    let xi_int = integrate_adaptive(
        &|s: f64| {
            let den = phi(-kappa, s) * (eps * s - psi(-kappa, s)) + dpsi(-kappa, s).powi(2);
            phi(-kappa, s) / den
        },
        1.0,
        r,
        1e-12,
    );
    Ok(exponent * r.ln()
        + (n as f64 - 2.0) * phi(-kappa, r).ln()
        + log_phi_canonical(eps, lambda, kappa, r)?
        + eps * xi_int)
}

fn first_zero_by_scan(f: impl Fn(f64) -> f64, hint: f64) -> f64 {
    let mut prev_r = hint * 1e-6;
    let mut prev = f(prev_r);
    let steps = 4000;
    for i in 1..=steps {
        let r = hint * 1.05 * i as f64 / steps as f64;
        let v = f(r);
        if prev > 0.0 && v <= 0.0 {
            // bisect
            let (mut a, mut b) = (prev_r, r);
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                if f(m) > 0.0 { a = m } else { b = m }
            }
            return 0.5 * (a + b);
        }
        prev_r = r;
        prev = v;
    }
    f64::INFINITY
}
