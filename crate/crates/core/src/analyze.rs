//! Density and regularity evidence from ensembles: kernel density estimates,
//! empirical characteristic functions, the Chapman–Kolmogorov self-consistency
//! test and the generator residual.
//!
//! Smoothness of a transition law cannot be proven numerically; these are
//! proxy diagnostics. Rapid decay of |φ̂(ξ)| below the sampling noise floor
//! and stability of the KDE under bandwidth halving are the fingerprints a
//! smooth density leaves on finite samples, and the reports say exactly that.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::model::SdeModel;
use crate::quad::{self, QuadConfig};
use crate::rng::RngStream;
use crate::simulate::{
    run_subpath_terminal, simulate_ensemble, CompiledSde, EnsembleOptions, SimulationScheme,
};

/// Gaussian-kernel density estimate on a fixed grid (one marginal).
#[derive(Debug, Clone, Serialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub bandwidth: f64,
    pub values: Vec<f64>,
    pub sample_count: usize,
}

impl DensityEstimate {
    /// Trapezoid integral over the grid; about 1 when the grid spans the mass.
    pub fn integral(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.grid.len() - 1 {
            s += 0.5 * (self.values[i] + self.values[i + 1]) * (self.grid[i + 1] - self.grid[i]);
        }
        s
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// sup |ρ̂ − other| over the shared grid.
    pub fn sup_distance(&self, other: &DensityEstimate) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Silverman's bandwidth 1.06 σ̂ n^(−1/5).
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    1.06 * var.sqrt().max(1e-12) * n.powf(-0.2)
}

/// Default evaluation grid: 256 points spanning mean ± 5 standard deviations.
pub fn default_grid(samples: &[f64], points: usize) -> Vec<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-9);
    let (lo, hi) = (mean - 5.0 * sd, mean + 5.0 * sd);
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

pub fn kde(samples: &[f64], bandwidth: f64, grid: &[f64]) -> Result<DensityEstimate> {
    if samples.is_empty() {
        return Err(Error::config("kde needs a nonempty sample set"));
    }
    if bandwidth <= 0.0 {
        return Err(Error::config("kde bandwidth must be positive"));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let values = grid
        .iter()
        .map(|y| {
            samples
                .iter()
                .map(|x| {
                    let t = (y - x) / bandwidth;
                    (-0.5 * t * t).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(DensityEstimate {
        grid: grid.to_vec(),
        bandwidth,
        values,
        sample_count: samples.len(),
    })
}

/// |φ̂| along one direction of frequency space.
#[derive(Debug, Clone, Serialize)]
pub struct CharFunctionProfile {
    pub xi: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// 3/√N, the scale below which estimates are sampling noise.
    pub noise_floor: f64,
    /// Smallest |ξ| at which |φ̂| drops below the noise floor, if any.
    pub decay_crossing: Option<f64>,
}

/// Empirical characteristic function magnitudes |1/N Σ exp(i ξ u·X_j)| over a
/// radial frequency grid along direction `u`.
pub fn char_function(
    samples: &[Vec<f64>],
    u: &[f64],
    xi_grid: &[f64],
) -> Result<CharFunctionProfile> {
    if samples.is_empty() {
        return Err(Error::config("char_function needs a nonempty sample set"));
    }
    let projections: Vec<f64> = samples
        .iter()
        .map(|x| x.iter().zip(u).map(|(a, b)| a * b).sum())
        .collect();
    let n = projections.len() as f64;
    let noise_floor = 3.0 / n.sqrt();
    let mut magnitude = Vec::with_capacity(xi_grid.len());
    for &xi in xi_grid {
        let (mut re, mut im) = (0.0, 0.0);
        for &p in &projections {
            let (s, c) = (xi * p).sin_cos();
            re += c;
            im += s;
        }
        magnitude.push((re * re + im * im).sqrt() / n);
    }
    let decay_crossing = xi_grid
        .iter()
        .zip(&magnitude)
        .find(|(_, m)| **m < noise_floor)
        .map(|(xi, _)| *xi);
    Ok(CharFunctionProfile {
        xi: xi_grid.to_vec(),
        magnitude,
        noise_floor,
        decay_crossing,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChapmanKolmogorovReport {
    pub one_shot: f64,
    pub one_shot_se: f64,
    pub nested: f64,
    pub nested_se: f64,
    pub discrepancy: f64,
    /// √(se₁² + se₂²); the inner-loop bias is folded in through the empirical
    /// variance of the inner means.
    pub pooled_se: f64,
    pub failures: usize,
}

/// Compare E φ(X_{t+s}) against E[(T_s φ)(X_t)] with M fresh sub-paths per
/// outer sample. Outer paths use streams [0, N); inner paths use streams
/// N + i·M + m, so the estimate is reproducible under any scheduling.
#[allow(clippy::too_many_arguments)]
pub fn chapman_kolmogorov(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    t: f64,
    s: f64,
    phi: &Expr,
    n: usize,
    m_inner: usize,
) -> Result<ChapmanKolmogorovReport> {
    if t <= 0.0 || s < 0.0 {
        return Err(Error::config("need t > 0 and s >= 0"));
    }
    let compiled = CompiledSde::new(model)?;

    // one-shot estimate over [0, t+s]
    let one = simulate_ensemble(model, scheme, x0, t + s, n, EnsembleOptions::default())?;
    let (one_shot, one_shot_se) = mean_of_expr(&one.terminal_states(), phi)?;

    // nested estimate: outer to t, then M sub-paths over s
    let outer = simulate_ensemble(model, scheme, x0, t, n, EnsembleOptions::default())?;
    let mut inner_means = Vec::with_capacity(n);
    let mut failures = one.failures + outer.failures;
    use rayon::prelude::*;
    let nested_results: Vec<Result<Option<f64>>> = outer
        .paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let Some(p) = p else { return Ok(None) };
            if s == 0.0 {
                return Ok(Some(phi.eval(&p.state)?));
            }
            let mut acc = 0.0;
            let mut ok = 0usize;
            for m in 0..m_inner {
                let stream = (n + i * m_inner + m) as u64;
                let mut rng = RngStream::new(scheme.seed, stream);
                match run_subpath_terminal(&compiled, scheme, &p.state, s, &mut rng) {
                    Ok(xs) => {
                        acc += phi.eval(&xs)?;
                        ok += 1;
                    }
                    Err(Error::BlowUp { .. }) => {}
                    Err(other) => return Err(other),
                }
            }
            if ok == 0 {
                Ok(None)
            } else {
                Ok(Some(acc / ok as f64))
            }
        })
        .collect();
    for r in nested_results {
        match r? {
            Some(v) => inner_means.push(v),
            None => failures += 1,
        }
    }
    let nf = inner_means.len() as f64;
    let nested = inner_means.iter().sum::<f64>() / nf;
    let var = (inner_means.iter().map(|v| v * v).sum::<f64>() / nf - nested * nested).max(0.0);
    let nested_se = (var / nf).sqrt();
    let discrepancy = one_shot - nested;
    Ok(ChapmanKolmogorovReport {
        one_shot,
        one_shot_se,
        nested,
        nested_se,
        discrepancy,
        pooled_se: (one_shot_se * one_shot_se + nested_se * nested_se).sqrt(),
        failures,
    })
}

fn mean_of_expr(states: &[&[f64]], phi: &Expr) -> Result<(f64, f64)> {
    let n = states.len() as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for x in states {
        let v = phi.eval(x)?;
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratorReport {
    /// 𝒜φ(x) by symbolic derivatives plus symmetrized-pair jump quadrature.
    pub generator_value: f64,
    /// Bound on the omitted |z| < eps_quad contribution.
    pub truncation_bound: f64,
    pub steps: Vec<f64>,
    /// (E φ(X_h) − φ(x))/h per step.
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// |estimate − generator_value| per step.
    pub residuals: Vec<f64>,
}

/// Evaluate 𝒜φ(x) = ½ Σ_k (A_k·∇)²φ + A₀·∇φ + p.v.∫ (φ(x+g(x,z)) − φ(x)) ν(dz)
/// and compare against the finite-time quotient (E φ(X_h) − φ(x))/h for each
/// h. The principal value is evaluated in symmetrized pairs {z, −z}, which is
/// absolutely convergent for odd g.
pub fn generator_residual(
    model: &SdeModel,
    scheme: &SimulationScheme,
    phi: &Expr,
    x: &[f64],
    h_list: &[f64],
    paths: usize,
) -> Result<GeneratorReport> {
    let (gen, trunc) = generator_apply(model, phi, x)?;
    let mut estimates = Vec::with_capacity(h_list.len());
    let mut stderrs = Vec::with_capacity(h_list.len());
    let mut residuals = Vec::with_capacity(h_list.len());
    let phi_x = phi.eval(x)?;
    for (k, &h) in h_list.iter().enumerate() {
        let mut sch = *scheme;
        sch.h = sch.h.min(h / 10.0);
        sch.seed = scheme.seed.wrapping_add(k as u64);
        let res = simulate_ensemble(model, &sch, x, h, paths, EnsembleOptions::default())?;
        let (mean, se) = res.mean_of(|y| phi.eval(y).unwrap_or(f64::NAN));
        estimates.push((mean - phi_x) / h);
        stderrs.push(se / h);
        residuals.push(((mean - phi_x) / h - gen).abs());
    }
    Ok(GeneratorReport {
        generator_value: gen,
        truncation_bound: trunc,
        steps: h_list.to_vec(),
        estimates,
        stderrs,
        residuals,
    })
}

/// 𝒜φ(x) and the truncation bound for the omitted ball |z| < eps_quad.
pub fn generator_apply(model: &SdeModel, phi: &Expr, x: &[f64]) -> Result<(f64, f64)> {
    let d = model.dim;
    if phi.max_var().is_some_and(|v| v >= d) {
        return Err(Error::DimMismatch(
            "test function uses variables beyond the state".into(),
        ));
    }
    // drift and second-order diffusion terms, symbolically
    let a0 = model.ito_drift_field();
    let mut value = a0.apply_to(phi).eval(x)?;
    for sigma in &model.diffusion {
        let first = sigma.apply_to(phi);
        let second = sigma.apply_to(&first);
        value += 0.5 * second.eval(x)?;
    }
    // jump part in symmetrized pairs
    let m = model.mark_dim;
    if model.has_jumps() {
        if model.g_exprs().is_none() {
            return Err(Error::Unsupported(
                "generator quadrature needs a symbolic jump coefficient".into(),
            ));
        }
        if m > 3 {
            return Err(Error::Unsupported(
                "generator quadrature supports mark dimension <= 3".into(),
            ));
        }
        let alpha = model.alpha;
        // paired evaluations cancel to O(|z|²), so stop above the f64
        // cancellation floor and add the leading-order tail correction
        let eps_quad = model.zmax * 3e-4;
        let phi_x = phi.eval(x)?;
        let cfg = QuadConfig {
            abs_tol: 1e-9 * (1.0 + phi_x.abs()),
            ..QuadConfig::with_rel_tol(1e-9)
        };
        let mut jump_val = 0.0;
        let mut trunc = 0.0;
        for (omega, w) in quad::sphere_grid(m, 48) {
            let paired = |r: f64| -> f64 {
                let pair: f64 = [1.0, -1.0]
                    .iter()
                    .map(|sgn| {
                        let z: Vec<f64> = omega.iter().map(|o| sgn * o * r).collect();
                        let g = model.eval_g(x, &z).unwrap_or_else(|_| vec![f64::NAN; d]);
                        let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
                        phi.eval(&shifted).unwrap_or(f64::NAN) - phi_x
                    })
                    .sum();
                0.5 * pair * r.powf(-1.0 - alpha)
            };
            let val = quad::integrate_radial(paired, eps_quad, model.zmax, cfg)?;
            // ∫_0^{eps} c r^(1−α) dr with c read off at the cut radius
            let tail = paired(eps_quad) * eps_quad / (2.0 - alpha);
            jump_val += w * (val + tail);
            // the correction itself is exact to O(eps²) relative
            trunc += (w * tail).abs() * eps_quad * eps_quad;
        }
        value += jump_val;
        return Ok((value, trunc));
    }
    Ok((value, 0.0))
}
