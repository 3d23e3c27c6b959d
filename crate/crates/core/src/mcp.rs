//! Measure contraction experiments: geodesic contraction maps, Monte-Carlo
//! volume distortion, the MCP(0,N) exponent probes, and the pointwise
//! Theta-density bound.
//!
//! Orientation convention (documented and tested through both endpoint
//! limits): contract(x0, x, t) follows the definition's map phi_{t,x0} along
//! the unique minimal geodesic from x to x0, so t = 0 returns x and t = 1
//! returns x0, and the contraction inequality reads
//! nu(phi_t(U)) >= (1-t)^N nu(U).

use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::geodesics::{flow_endpoint, heisenberg_flow};
use crate::kernels::theta_log;
use crate::models::{ModelKind, ModelSpace};
use crate::sampling::stream_rng;
use crate::shooting::{solve_bvp, BvpOutcome};
use crate::{Error, Result};

/// A box region in chart coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Region { lo, hi }
    }

    pub fn center(c: &[f64], half: &[f64]) -> Self {
        Region {
            lo: c.iter().zip(half).map(|(a, h)| a - h).collect(),
            hi: c.iter().zip(half).map(|(a, h)| a + h).collect(),
        }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| rng.gen_range(0.0..1.0) * (b - a) + a)
            .collect()
    }
}

/// Point at parameter t of the definition's contraction phi_{t,x0} applied
/// to x (the minimal geodesic from x to x0; errors on tied minimizers).
pub fn contract(model: &Arc<ModelSpace>, eps: f64, x0: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    let out = solve_bvp(model, eps, x0, x, 48)?;
    if out.ambiguous {
        return Err(Error::CutLocus("contraction needs a unique minimizer"));
    }
    contract_along(model, eps, x0, &out, 1.0 - t)
}

/// Point at fraction s of the arc length along the solved minimizer from x0.
fn contract_along(model: &Arc<ModelSpace>, eps: f64, x0: &[f64], out: &BvpOutcome, s: f64) -> Result<Vec<f64>> {
    let best = out.best();
    if model.kind == ModelKind::Heisenberg {
        let (chart, _) = heisenberg_flow(model, eps, x0, &best.w0, best.charge, s);
        Ok(chart)
    } else {
        let pos0 = model.chart_to_pos(x0)?;
        let end = flow_endpoint(model, eps, &pos0, &best.w0, best.charge, s)?;
        model.pos_to_chart(&end)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McpProbe {
    pub model: String,
    pub eps: f64,
    pub x0: Vec<f64>,
    pub region: Region,
    pub t: f64,
    pub samples: usize,
    pub measured_ratio: f64,
    pub std_error: f64,
    pub theoretical_factor: f64,
    /// log(ratio)/log(1-t).
    pub exponent_estimate: f64,
    /// measured >= theoretical - 3 SE
    pub pass: bool,
}

/// Monte-Carlo estimate of nu(phi_t(U))/nu(U) by the inverse-membership
/// indicator over a stratified bounding box of the image, against the
/// MCP(0,N) factor (1-t)^N.
#[allow(clippy::too_many_arguments)]
pub fn mcp_exponent_probe(
    model: &Arc<ModelSpace>,
    eps: f64,
    x0: &[f64],
    region: &Region,
    t_grid: &[f64],
    n_exponent: f64,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<McpProbe>> {
    let m = model;
    if m.kind != ModelKind::Heisenberg {
        return Err(Error::UnsupportedModel(
            "the clean exponent probe needs the flat model; curved models use the theta route".into(),
        ));
    }
    let dim = m.dim;
    let mut probes = Vec::new();
    for (ti, &t) in t_grid.iter().enumerate() {
        let s = 1.0 - t;
        // bounding box of the image: map corners and face centers
        let mut img_lo = vec![f64::INFINITY; dim];
        let mut img_hi = vec![f64::NEG_INFINITY; dim];
        let mut corners: Vec<Vec<f64>> = Vec::new();
        for mask in 0..(1usize << dim) {
            let c: Vec<f64> = (0..dim)
                .map(|i| if mask & (1 << i) != 0 { region.hi[i] } else { region.lo[i] })
                .collect();
            corners.push(c);
        }
        corners.push(region.lo.iter().zip(&region.hi).map(|(a, b)| 0.5 * (a + b)).collect());
        for c in &corners {
            if let Ok(y) = contract(model, eps, x0, c, t) {
                for i in 0..dim {
                    img_lo[i] = img_lo[i].min(y[i]);
                    img_hi[i] = img_hi[i].max(y[i]);
                }
            }
        }
        for i in 0..dim {
            let pad = 0.35 * (img_hi[i] - img_lo[i]) + 1e-6;
            img_lo[i] -= pad;
            img_hi[i] += pad;
        }
        let bbox = Region::new(img_lo, img_hi);
        // stratified sampling over the bounding box
        let strata = 4usize;
        let per = (samples / strata.pow(dim as u32)).max(1);
        let mut hits = 0usize;
        let mut total = 0usize;
        let mut rng = stream_rng(seed, stream.wrapping_mul(1000).wrapping_add(ti as u64));
        let mut widths = vec![0.0; dim];
        for i in 0..dim {
            widths[i] = (bbox.hi[i] - bbox.lo[i]) / strata as f64;
        }
        let mut idx = vec![0usize; dim];
        loop {
            let cell = Region::new(
                (0..dim).map(|i| bbox.lo[i] + widths[i] * idx[i] as f64).collect(),
                (0..dim).map(|i| bbox.lo[i] + widths[i] * (idx[i] + 1) as f64).collect(),
            );
            let mut warm: Vec<(nalgebra::DVector<f64>, f64)> = Vec::new();
            for _ in 0..per {
                let y = cell.sample(&mut rng);
                total += 1;
                // inverse contraction: extend the minimal geodesic to y by 1/s
                let Ok(out) = crate::shooting::solve_bvp_seeded(model, eps, x0, &y, 16, &warm)
                else {
                    continue;
                };
                if out.ambiguous {
                    continue;
                }
                warm.clear();
                warm.push((out.best().w0.clone(), out.best().charge));
                // the extension must itself be minimizing, otherwise y is
                // not phi_t of pre (this is an open set, not a null set).
                // On the Heisenberg models the cut of an extension is exactly
                // the full winding: rotation angle rate * (1/s) hits 2 pi.
                let best = out.best();
                let rate = if eps > 0.0 { best.w0[m.n] / eps } else { -m.sr_sign * best.charge };
                if (rate / s).abs() >= 2.0 * std::f64::consts::PI * (1.0 - 1e-9) {
                    continue;
                }
                let Ok(pre) = contract_along(model, eps, x0, &out, 1.0 / s) else { continue };
                if region.contains(&pre) {
                    hits += 1;
                }
            }
            // advance the multi-index
            let mut carry = 0;
            while carry < dim {
                idx[carry] += 1;
                if idx[carry] < strata {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
            }
            if carry == dim {
                break;
            }
        }
        let p = hits as f64 / total as f64;
        // nu is the g-volume: Lebesgue on the Heisenberg chart
        let image_vol = p * bbox.volume();
        let ratio = image_vol / region.volume();
        let se = (p * (1.0 - p) / total as f64).sqrt() * bbox.volume() / region.volume();
        let target_rel = 0.005;
        if ratio > 0.0 && se / ratio > 10.0 * target_rel {
            return Err(Error::SampleStarvation { rel_err: se / ratio, target: 10.0 * target_rel });
        }
        let theoretical = s.powf(n_exponent);
        probes.push(McpProbe {
            model: m.name(),
            eps,
            x0: x0.to_vec(),
            region: region.clone(),
            t,
            samples: total,
            measured_ratio: ratio,
            std_error: se,
            theoretical_factor: theoretical,
            exponent_estimate: ratio.ln() / s.ln(),
            pass: ratio >= theoretical - 3.0 * se,
        })
    }
    Ok(probes)
}

/// MC volume of an uncontracted box against its analytic g-volume (the
/// benchmark for the estimator); returns (mc, analytic, std_error).
pub fn volume_benchmark(
    model: &Arc<ModelSpace>,
    region: &Region,
    samples: usize,
    seed: u64,
) -> (f64, f64, f64) {
    // density-weighted MC over the box itself
    let mut rng = stream_rng(seed, 999);
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..samples {
        let x = region.sample(&mut rng);
        let d = model.mu_density_chart(&x);
        acc += d;
        acc2 += d * d;
    }
    let mean = acc / samples as f64;
    let var = (acc2 / samples as f64 - mean * mean).max(0.0);
    let mc = mean * region.volume();
    let se = (var / samples as f64).sqrt() * region.volume();
    // analytic: adaptive quadrature of the density (Fubini over the box)
    let analytic = if model.kind == ModelKind::Heisenberg {
        region.volume()
    } else {
        // low-order tensor quadrature is enough for the benchmark
        let n = 24;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [
                        region.lo[0] + (region.hi[0] - region.lo[0]) * (i as f64 + 0.5) / n as f64,
                        region.lo[1] + (region.hi[1] - region.lo[1]) * (j as f64 + 0.5) / n as f64,
                        region.lo[2] + (region.hi[2] - region.lo[2]) * (k as f64 + 0.5) / n as f64,
                    ];
                    total += model.mu_density_chart(&x);
                }
            }
        }
        total / (n * n * n) as f64 * region.volume()
    };
    (mc, analytic, se)
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaRecord {
    pub model: String,
    pub eps: f64,
    pub x: Vec<f64>,
    pub r: f64,
    pub lambda: f64,
    pub t: f64,
    pub measured_jacobian: f64,
    pub bound: f64,
    pub margin: f64,
    pub flags: Vec<String>,
}

/// Pointwise Theta-density bound: the nu-weighted Jacobian of the
/// contraction x -> phi_t(x), measured by chart finite differences, must
/// dominate (1-t) Theta(lambda, (1-t) r)/Theta(lambda, r).
pub fn theta_bound_check(
    model: &Arc<ModelSpace>,
    eps: f64,
    x0: &[f64],
    points: &[Vec<f64>],
    t: f64,
    tolerance: f64,
) -> Result<Vec<ThetaRecord>> {
    if eps <= 0.0 {
        return Err(Error::NonPositiveEps(eps));
    }
    let m = model;
    let dim = m.dim;
    let s = 1.0 - t;
    let mut records = Vec::new();
    for x in points {
        let out = solve_bvp(model, eps, x0, x, 32)?;
        let mut flags = Vec::new();
        if out.ambiguous {
            flags.push("cut".to_string());
        }
        let r = out.length();
        let lambda = out.best().lambda;
        // finite-difference Jacobian of the chart map phi_t
        let h = 1e-4;
        let mut jac = nalgebra::DMatrix::zeros(dim, dim);
        let mut singular = false;
        for j in 0..dim {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            match (contract(model, eps, x0, &xp, t), contract(model, eps, x0, &xm, t)) {
                (Ok(a), Ok(b)) => {
                    for i in 0..dim {
                        jac[(i, j)] = (a[i] - b[i]) / (2.0 * h);
                    }
                }
                _ => {
                    singular = true;
                    break;
                }
            }
        }
        if singular {
            records.push(ThetaRecord {
                model: m.name(),
                eps,
                x: x.clone(),
                r,
                lambda,
                t,
                measured_jacobian: f64::NAN,
                bound: f64::NAN,
                margin: 0.0,
                flags: vec!["singular".to_string()],
            });
            continue;
        }
        let y = contract(model, eps, x0, x, t)?;
        let measured = jac.determinant().abs() * m.mu_density_chart(&y) / m.mu_density_chart(x);
        let kappa = lambda * m.k1;
        let bound = if t >= 1.0 - 1e-12 {
            1.0
        } else {
            s * (theta_log(eps, lambda, kappa, m.n, s * r)? - theta_log(eps, lambda, kappa, m.n, r)?).exp()
        };
        records.push(ThetaRecord {
            model: m.name(),
            eps,
            x: x.clone(),
            r,
            lambda,
            t,
            measured_jacobian: measured,
            bound,
            margin: measured - (bound - tolerance),
            flags,
        });
    }
    Ok(records)
}

/// Small-t scaling exponent of the Theta bound: d log(bound)/d log(s) as
/// s -> 0, compared against the symbolic expansion
/// 1 + min(1, 1/lambda - 1) + (n - 2) + p, where p is the combined leading
/// power of the Phi and exp(eps int Xi) factors: the canonical Phi behaves
/// like r and Xi like 1/(eps r) for eps > 0 (so p = 2), while at eps = 0 the
/// Xi factor drops and Phi behaves like r^4 (so p = 4 and the total is the
/// sharp n + 3).
pub fn theta_small_t_exponent(eps: f64, lambda: f64, kappa: f64, n: usize, r: f64) -> Result<(f64, f64)> {
    let bound_log = |s: f64| -> Result<f64> {
        Ok(s.ln() + theta_log(eps, lambda, kappa, n, s * r)? - theta_log(eps, lambda, kappa, n, r)?)
    };
    let (s1, s2) = (1e-4, 2e-4);
    let numeric = (bound_log(s2)? - bound_log(s1)?) / (s2.ln() - s1.ln());
    let p = if eps > 0.0 { 2.0 } else { 4.0 };
    let symbolic = 1.0 + (1.0f64).min(1.0 / lambda - 1.0) + (n as f64 - 2.0) + p;
    Ok((numeric, symbolic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;

    fn h3() -> Arc<ModelSpace> {
        Arc::new(build_model(ModelKind::Heisenberg, 2).unwrap())
    }

    #[test]
    fn contraction_endpoints_and_midpoint() {
        let m = h3();
        let x0 = [0.0; 3];
        let x = [1.0, 0.0, 0.0];
        let at = |t: f64| contract(&m, 1.0, &x0, &x, t).unwrap();
        let y0 = at(0.0);
        for i in 0..3 {
            assert!((y0[i] - x[i]).abs() < 1e-9);
        }
        let y1 = at(1.0);
        assert!(y1.iter().map(|v| v.abs()).sum::<f64>() < 1e-9);
        let ymid = at(0.5);
        assert!((ymid[0] - 0.5).abs() < 1e-9 && ymid[1].abs() < 1e-10 && ymid[2].abs() < 1e-10);
    }

    #[test]
    fn contraction_semigroup_reparametrization() {
        // contracting to fraction s1 then to fraction s2 of the result equals
        // contracting to s1 s2 directly (unique-minimizer points)
        let m = h3();
        let x0 = [0.0; 3];
        let x = [0.6, 0.2, 0.1];
        let (s1, s2) = (0.7, 0.6);
        let step1 = contract(&m, 0.25, &x0, &x, 1.0 - s1).unwrap();
        let step2 = contract(&m, 0.25, &x0, &step1, 1.0 - s2).unwrap();
        let direct = contract(&m, 0.25, &x0, &x, 1.0 - s1 * s2).unwrap();
        for i in 0..3 {
            assert!((step2[i] - direct[i]).abs() < 1e-8, "{step2:?} vs {direct:?}");
        }
    }

    #[test]
    fn volume_benchmark_within_three_sigma() {
        let m = h3();
        let region = Region::center(&[0.2, 0.1, 0.15], &[0.2, 0.2, 0.1]);
        let (mc, analytic, se) = volume_benchmark(&m, &region, 20000, 7);
        assert!((mc - analytic).abs() <= 3.0 * se.max(1e-12), "{mc} vs {analytic} (se {se})");
        let hopf = Arc::new(build_model(ModelKind::HopfSphere, 2).unwrap());
        let (mc, analytic, se) = volume_benchmark(&hopf, &region, 20000, 7);
        assert!((mc - analytic).abs() <= 3.0 * se, "{mc} vs {analytic} (se {se})");
    }

    #[test]
    fn sub_riemannian_probe_satisfies_mcp05() {
        let m = h3();
        let region = Region::center(&[0.0, 0.0, 0.25], &[0.18, 0.18, 0.08]);
        let probes =
            mcp_exponent_probe(&m, 0.0, &[0.0; 3], &region, &[0.35, 0.5], 5.0, 16000, 7, 0).unwrap();
        for p in &probes {
            assert!(p.pass, "t={}: ratio {} vs {} (se {})", p.t, p.measured_ratio, p.theoretical_factor, p.std_error);
            assert!(p.exponent_estimate <= 5.2, "exponent {}", p.exponent_estimate);
        }
    }

    #[test]
    fn theta_bound_holds_pointwise_on_h3() {
        let m = h3();
        let pts = vec![vec![0.5, 0.1, 0.12], vec![0.3, -0.4, 0.05], vec![0.2, 0.6, -0.2]];
        let recs = theta_bound_check(&m, 1.0, &[0.0; 3], &pts, 0.4, 1e-3).unwrap();
        for rec in recs {
            assert!(rec.flags.is_empty());
            assert!(rec.margin >= 0.0, "measured {} bound {}", rec.measured_jacobian, rec.bound);
        }
    }

    #[test]
    fn theta_scaling_exponent_matches_symbolic() {
        for (eps, lambda, kappa, n, r) in [(1.0, 0.8, 0.0, 2usize, 0.9), (0.25, 0.5, 0.3, 2, 0.7)] {
            let (num, sym) = theta_small_t_exponent(eps, lambda, kappa, n, r).unwrap();
            assert!((num - sym).abs() < 1e-2, "{num} vs {sym}");
        }
    }
}
