//! Jump-geometry matrices and Malliavin covariance accumulation.
//!
//! For a jump map x ↦ x + g(x, z) the two matrices driving the covariance
//! structure are Q(x, z) = (I + ∇x g)⁻¹ − I and U(x, z) = (I + ∇x g)⁻¹ ∇z g.
//! The increment function G_V(x, z) = V(x + g) − V(x) + Q·V(x + g) carries the
//! bracket identity ∇z G_V(x, 0) = `[Ã, V](x)`, which this module checks by
//! finite differences. On simulated paths it accumulates the full matrix
//! Σ = Σ⁽¹⁾ + Σ⁽²⁾ and estimates the Laplace transform E exp(−λ u Σ̂ uᵀ).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::SdeModel;
use crate::quad::{self, QuadConfig};
use crate::rng::RngStream;
use crate::simulate::{simulate_ensemble, EnsembleOptions, PathSample, SimulationScheme};
use crate::vecfield::{lie_bracket, VectorField};

/// I + ∇x g, Q and U at one (x, z).
#[derive(Debug, Clone)]
pub struct JumpLinearization {
    pub jump_map: Mat,
    pub q: Mat,
    pub u: Mat,
}

/// Q(x, z) and U(x, z) from the symbolic Jacobians of g and a dense solve.
pub fn jump_linearization(model: &SdeModel, x: &[f64], z: &[f64]) -> Result<JumpLinearization> {
    let d = model.dim;
    let jump_map = Mat::identity(d).add(&model.grad_x_g(x, z)?);
    if jump_map.det() <= 0.0 {
        return Err(Error::SingularJumpMap(format!("x = {x:?}, z = {z:?}")));
    }
    let inv = jump_map
        .inverse()
        .map_err(|_| Error::SingularJumpMap(format!("x = {x:?}, z = {z:?}")))?;
    let q = inv.sub(&Mat::identity(d));
    let u = inv.matmul(&model.grad_z_g(x, z)?);
    Ok(JumpLinearization { jump_map, q, u })
}

/// G_V(x, z) = V(x + g(x, z)) − V(x) + Q(x, z)·V(x + g(x, z)).
pub fn g_v(model: &SdeModel, v: &VectorField, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let g = model.eval_g(x, z)?;
    let shifted: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b).collect();
    let v_shift = v.eval(&shifted)?;
    let v_here = v.eval(x)?;
    let lin = jump_linearization(model, x, z)?;
    let qv = lin.q.matvec(&v_shift);
    Ok((0..model.dim)
        .map(|i| v_shift[i] - v_here[i] + qv[i])
        .collect())
}

/// ‖∇z G_V(x, 0) − `[Ã, V](x)`‖∞ with the gradient taken by central finite
/// differences of step `h`; the deviation vanishes at rate O(h²).
pub fn gv_check(model: &SdeModel, v: &VectorField, x: &[f64], h: f64) -> Result<f64> {
    let d = model.dim;
    let m = model.mark_dim;
    let mut fd = Mat::zeros(d, m);
    for k in 0..m {
        let mut zp = vec![0.0; m];
        let mut zm = vec![0.0; m];
        zp[k] = h;
        zm[k] = -h;
        let gp = g_v(model, v, x, &zp)?;
        let gm = g_v(model, v, x, &zm)?;
        for i in 0..d {
            fd[(i, k)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let mut bracket = Mat::zeros(d, m);
    for (k, atilde) in model.jump_fields()?.iter().enumerate() {
        let col = lie_bracket(atilde, v)?.eval(x)?;
        for i in 0..d {
            bracket[(i, k)] = col[i];
        }
    }
    Ok(fd.sub(&bracket).max_abs())
}

/// H^δ_V(x) = ∫_{|z| ≤ δ} [G_V + ∇x g·V(x) − g·∇V(x)] ν(dz), evaluated in
/// symmetrized pairs {z, −z} so the integrand is O(|z|²) and absolutely
/// integrable.
pub fn h_delta(
    model: &SdeModel,
    v: &VectorField,
    x: &[f64],
    delta: f64,
    cfg: QuadConfig,
) -> Result<Vec<f64>> {
    if delta > model.zmax {
        return Err(Error::config(format!(
            "delta {delta} exceeds the jump support radius {}",
            model.zmax
        )));
    }
    let d = model.dim;
    let m = model.mark_dim;
    if m > 3 {
        return Err(Error::Unsupported(
            "h_delta quadrature supports mark dimension <= 3".into(),
        ));
    }
    let alpha = model.alpha;
    let grad_v: Vec<Vec<f64>> = v
        .jacobian_exprs()
        .iter()
        .map(|row| row.iter().map(|e| e.eval(x)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let vx = v.eval(x)?;
    let integrand_one_sided = |z: &[f64]| -> Result<Vec<f64>> {
        let gv = g_v(model, v, x, z)?;
        let grad_g_v = model.grad_x_g(x, z)?.matvec(&vx);
        let g = model.eval_g(x, z)?;
        Ok((0..d)
            .map(|i| {
                let transport: f64 = (0..d).map(|j| g[j] * grad_v[i][j]).sum();
                gv[i] + grad_g_v[i] - transport
            })
            .collect())
    };
    // The paired integrand is an O(r²) difference of O(1) terms, so f64
    // cancellation noise takes over below ~1e-7·δ. Cut there and add the
    // leading-order tail: I(r) ≈ c r^(1−α) gives ∫_0^{r_low} = I(r_low)
    // r_low/(2−α), accurate to O(r_low²) relative. The absolute tolerance is
    // anchored to the field scale; otherwise a vanishing integral (linear V)
    // would chase tolerances below the integrand's own rounding noise.
    let r_low = delta * 3e-4;
    let scale = 1.0
        + vx.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        + delta * grad_v.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let cfg = QuadConfig {
        abs_tol: cfg.abs_tol.max(1e-9 * scale),
        ..cfg
    };
    let mut out = vec![0.0; d];
    for (omega, w) in quad::sphere_grid(m, 48) {
        let paired = |r: f64, i: usize| -> f64 {
            let zp: Vec<f64> = omega.iter().map(|o| o * r).collect();
            let zm: Vec<f64> = omega.iter().map(|o| -o * r).collect();
            let fp = integrand_one_sided(&zp).unwrap_or_else(|_| vec![f64::NAN; d]);
            let fm = integrand_one_sided(&zm).unwrap_or_else(|_| vec![f64::NAN; d]);
            0.5 * (fp[i] + fm[i]) * r.powf(-1.0 - alpha)
        };
        for i in 0..d {
            let val = quad::integrate_radial(|r| paired(r, i), r_low, delta, cfg)?;
            let tail = paired(r_low, i) * r_low / (2.0 - alpha);
            out[i] += w * (val + tail);
        }
    }
    Ok(out)
}

/// Cutoff weight ζ(z) = |z|^(1+ℓ) η(|z|): equal to |z|^(1+ℓ) below δ/4,
/// zero above δ/2, quintic-smoothstep transition in between.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MalliavinConfig {
    pub ell: u32,
    pub delta: f64,
}

impl MalliavinConfig {
    pub fn new(ell: u32, delta: f64) -> Result<MalliavinConfig> {
        if ell < 2 {
            return Err(Error::config("cutoff order ell must be at least 2"));
        }
        if delta <= 0.0 {
            return Err(Error::config("cutoff radius delta must be positive"));
        }
        Ok(MalliavinConfig { ell, delta })
    }

    pub fn zeta(&self, z: &[f64]) -> f64 {
        let r: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let power = r.powi(1 + self.ell as i32);
        let lo = self.delta / 4.0;
        let hi = self.delta / 2.0;
        if r <= lo {
            power
        } else if r >= hi {
            0.0
        } else {
            let t = (r - lo) / (hi - lo);
            let smooth = t * t * t * (t * (6.0 * t - 15.0) + 10.0);
            power * (1.0 - smooth)
        }
    }
}

/// Σ⁽¹⁾ + Σ⁽²⁾ over a path: the Brownian part by the rectangle rule, the jump
/// part as the ζ-weighted sum of K₋ U Uᵀ K₋ᵀ over logged jumps with |z| ≤ δ/2.
pub fn accumulate_full_matrix(
    path: &PathSample,
    model: &SdeModel,
    config: &MalliavinConfig,
) -> Result<Mat> {
    let d = model.dim;
    let mut sigma1 = Mat::zeros(d, d);
    for i in 0..path.times.len() - 1 {
        let dt = path.times[i + 1] - path.times[i];
        if dt <= 0.0 {
            continue;
        }
        let x = &path.states[i];
        let k = &path.inverses[i];
        let mut ssq = Mat::zeros(d, d);
        for col in &model.diffusion {
            let v = col.eval(x)?;
            ssq = ssq.add(&Mat::outer(&v));
        }
        sigma1.add_assign_scaled(&k.matmul(&ssq).matmul(&k.transpose()), dt);
    }
    let mut sigma2 = Mat::zeros(d, d);
    for (idx, jump) in path.jumps.iter().enumerate() {
        let weight = config.zeta(&jump.mark);
        if weight == 0.0 {
            continue;
        }
        let k_before = jump.k_before.as_ref().ok_or_else(|| {
            Error::config(format!("jump #{idx} carries no inverse-Jacobian snapshot"))
        })?;
        // the grid point at the jump time holds the post-jump state, so the
        // pre-jump state is the previous grid entry
        let pos = path
            .times
            .partition_point(|t| *t < jump.t - 1e-15)
            .saturating_sub(1);
        let x_before = &path.states[pos];
        let lin = jump_linearization(model, x_before, &jump.mark)?;
        let ku = k_before.matmul(&lin.u);
        sigma2.add_assign_scaled(&ku.matmul(&ku.transpose()), weight);
    }
    Ok(sigma1.add(&sigma2))
}

/// Closed-form Σ̂_t for the linear rotation system with velocity jumps:
/// Σ̂_t = ∫₀ᵗ (−sin s, cos s)ᵀ(−sin s, cos s) ds.
pub fn kolmogorov_sigma_oracle(t: f64) -> Mat {
    let a = t / 2.0 - (2.0 * t).sin() / 4.0;
    let b = -(t.sin().powi(2)) / 2.0;
    let c = t / 2.0 + (2.0 * t).sin() / 4.0;
    Mat::from_rows(&[vec![a, b], vec![b, c]])
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceReport {
    pub lambdas: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    /// (c2, gamma) from the regression log(−log m) = log(c2 t) + γ log λ over
    /// the decaying segment m ∈ [1e-3, 0.5]; None when the segment is empty.
    pub fit: Option<(f64, f64)>,
    pub fit_points: usize,
    /// Estimates stayed at 1 for every λ: no decay observed, which signals a
    /// spanning failure or a horizon too short.
    pub no_decay: bool,
    /// Some adjacent pair increased by more than two pooled standard errors.
    pub non_monotone: bool,
    pub paths: usize,
    pub failures: usize,
    /// Quantiles (1%, 5%, 50%) of u Σ̂ uᵀ across paths.
    pub quadform_quantiles: [f64; 3],
    /// Quantiles (1%, 5%, 50%) of det Σ̂ across paths. Inverse-determinant
    /// moments are heavy-tailed and are *not* estimated by naive Monte Carlo;
    /// these quantiles are the documented proxy.
    pub det_quantiles: [f64; 3],
}

/// Monte Carlo estimate of E exp(−λ u Σ̂_t uᵀ) per λ, with the decay-exponent
/// fit. `u` must be a unit row vector; the λ grid must increase.
#[allow(clippy::too_many_arguments)]
pub fn laplace_transform(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    u: &[f64],
    horizon: f64,
    lambdas: &[f64],
    paths: usize,
    seed: u64,
) -> Result<LaplaceReport> {
    let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "u must be a unit vector, |u| = {norm}"
        )));
    }
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[0] >= w[1]) || lambdas[0] < 0.0 {
        return Err(Error::config(
            "lambda grid must be increasing and nonnegative",
        ));
    }
    let mut scheme = *scheme;
    scheme.seed = seed;
    let res = simulate_ensemble(
        model,
        &scheme,
        x0,
        horizon,
        paths,
        EnsembleOptions {
            sigma_hat: true,
            det_j: false,
        },
    )?;
    let quadforms: Vec<f64> = res
        .successes()
        .map(|p| p.sigma_hat.as_ref().unwrap().quad_form(u))
        .collect();
    let dets: Vec<f64> = res
        .successes()
        .map(|p| p.sigma_hat.as_ref().unwrap().det())
        .collect();
    let failures = paths - quadforms.len();
    let nf = quadforms.len() as f64;
    let mut estimates = Vec::with_capacity(lambdas.len());
    let mut stderrs = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let (mut s1, mut s2) = (0.0, 0.0);
        for q in &quadforms {
            let e = (-lambda * q).exp();
            s1 += e;
            s2 += e * e;
        }
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0);
        estimates.push(mean);
        stderrs.push((var / nf).sqrt());
    }
    let mut non_monotone = false;
    for i in 1..estimates.len() {
        let slack = 2.0 * (stderrs[i - 1] + stderrs[i]);
        if estimates[i] > estimates[i - 1] + slack {
            non_monotone = true;
        }
    }
    let seg: Vec<(f64, f64)> = lambdas
        .iter()
        .zip(&estimates)
        .filter(|(_, m)| **m >= 1e-3 && **m <= 0.5)
        .map(|(l, m)| (l.ln(), (-(m.ln())).ln()))
        .collect();
    let fit = if seg.len() >= 2 {
        let n = seg.len() as f64;
        let sx: f64 = seg.iter().map(|(x, _)| x).sum();
        let sy: f64 = seg.iter().map(|(_, y)| y).sum();
        let sxx: f64 = seg.iter().map(|(x, _)| x * x).sum();
        let sxy: f64 = seg.iter().map(|(x, y)| x * y).sum();
        let gamma = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - gamma * sx) / n;
        // log(−log m) = log(c2 t) + γ log λ
        let c2 = intercept.exp() / horizon;
        Some((c2, gamma))
    } else {
        None
    };
    let no_decay = estimates.iter().all(|m| *m > 0.999);
    let quantiles = |values: &[f64]| -> [f64; 3] {
        if values.is_empty() {
            return [f64::NAN; 3];
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let pick = |p: f64| sorted[((p * sorted.len() as f64) as usize).min(sorted.len() - 1)];
        [pick(0.01), pick(0.05), pick(0.5)]
    };
    Ok(LaplaceReport {
        lambdas: lambdas.to_vec(),
        estimates,
        stderrs,
        fit,
        fit_points: seg.len(),
        no_decay,
        non_monotone,
        paths,
        failures,
        quadform_quantiles: quantiles(&quadforms),
        det_quantiles: quantiles(&dets),
    })
}

/// u Σ̂_T uᵀ over an ensemble (successes only, path order).
pub fn quadform_samples(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    u: &[f64],
    horizon: f64,
    paths: usize,
) -> Result<Vec<f64>> {
    let res = simulate_ensemble(
        model,
        scheme,
        x0,
        horizon,
        paths,
        EnsembleOptions {
            sigma_hat: true,
            det_j: false,
        },
    )?;
    Ok(res
        .successes()
        .map(|p| p.sigma_hat.as_ref().unwrap().quad_form(u))
        .collect())
}

/// Directions on the unit sphere for worst-direction sweeps: the golden-angle
/// circle for d = 2, a Fibonacci lattice for d = 3, seeded random directions
/// above that.
pub fn direction_sweep(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let th = std::f64::consts::PI * (1.0 + 5f64.sqrt()) * k as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => (0..count)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                let r = (1.0 - z * z).sqrt();
                let th = std::f64::consts::PI * (1.0 + 5f64.sqrt()) * k as f64;
                vec![r * th.cos(), r * th.sin(), z]
            })
            .collect(),
        _ => {
            let mut rng = RngStream::new(0x5eed, 1);
            (0..count).map(|_| rng.sphere_direction(dim)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, ModelSource, SdeModel};
    use crate::simulate::{simulate_path, SmallJumpMode};

    fn example(name: &str) -> SdeModel {
        match builtin(name).unwrap() {
            ModelSource::Sde(m) => m,
            ModelSource::Kinetic(k) => k.to_sde().unwrap(),
        }
    }

    #[test]
    fn linearization_additive() {
        let m = SdeModel::builder(1).jump_g("z1").unwrap().build().unwrap();
        let lin = jump_linearization(&m, &[0.3], &[0.5]).unwrap();
        assert!(lin.q.max_abs() < 1e-15);
        assert!((lin.u[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn linearization_standard_example() {
        // g = cos(x) z: at x = 0, ∇x g = −sin(0) z = 0 so Q = 0, U = cos(0) = 1
        let m = example("example1");
        let lin = jump_linearization(&m, &[0.0], &[0.3]).unwrap();
        assert!(lin.q.max_abs() < 1e-15);
        assert!((lin.u[(0, 0)] - 1.0).abs() < 1e-15);
        // Q = −(I + ∇x g)⁻¹ ∇x g on probes, and (I + ∇x g)(I + Q) = I
        let mut rng = RngStream::new(21, 0);
        for _ in 0..40 {
            let x = [3.0 * rng.uniform() - 1.5];
            let z = [0.9 * (2.0 * rng.uniform() - 1.0)];
            if z[0].abs() < 0.05 {
                continue;
            }
            let lin = jump_linearization(&m, &x, &z).unwrap();
            let grad = m.grad_x_g(&x, &z).unwrap();
            let expect = lin.jump_map.inverse().unwrap().matmul(&grad).scale(-1.0);
            assert!(lin.q.sub(&expect).max_abs() < 1e-10);
            let prod = lin.jump_map.matmul(&Mat::identity(1).add(&lin.q));
            assert!(prod.sub(&Mat::identity(1)).max_abs() < 1e-10);
        }
    }

    #[test]
    fn gv_check_additive_model() {
        // g = z: both sides equal ∇V(x)
        let m = SdeModel::builder(2)
            .jump_g("z1, z2")
            .unwrap()
            .build()
            .unwrap();
        let v = VectorField::parse("x2, x1", 2).unwrap();
        let dev = gv_check(&m, &v, &[0.4, -0.7], 1e-4).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn gv_check_examples_and_order() {
        let m1 = example("example1");
        let v1 = VectorField::parse("cos(x1)", 1).unwrap();
        let dev = gv_check(&m1, &v1, &[0.7], 1e-4).unwrap();
        assert!(dev < 1e-6, "example1 deviation {dev}");

        let m2 = example("example2");
        let v2 = VectorField::parse("x2, x1", 2).unwrap();
        let dev = gv_check(&m2, &v2, &[0.5, -0.3], 1e-4).unwrap();
        assert!(dev < 1e-6, "example2 deviation {dev}");

        // O(h²) convergence
        let devs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&h| gv_check(&m1, &v1, &[0.7], h).unwrap())
            .collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2], "{devs:?}");
        let rate = (devs[0] / devs[1]).log10();
        assert!(rate > 1.5, "observed order {rate}");
    }

    #[test]
    fn h_delta_additive_quadratic() {
        // g = z, V = x²: integrand is z², so H = ∫_{|z| ≤ 0.5} z² ν(dz) = 1
        // for α = 1 in one dimension
        let m = SdeModel::builder(1)
            .jump_g("z1")
            .unwrap()
            .alpha(1.0)
            .build()
            .unwrap();
        let v = VectorField::parse("x1^2", 1).unwrap();
        let h = h_delta(&m, &v, &[2.0], 0.5, QuadConfig::with_rel_tol(1e-9)).unwrap();
        assert!((h[0] - 1.0).abs() < 1e-7, "H = {}", h[0]);

        // constant and linear fields give zero
        let v0 = VectorField::parse("3", 1).unwrap();
        let h0 = h_delta(&m, &v0, &[2.0], 0.5, QuadConfig::with_rel_tol(1e-9)).unwrap();
        assert!(h0[0].abs() < 1e-9);
        let v1 = VectorField::parse("2*x1", 1).unwrap();
        let h1 = h_delta(&m, &v1, &[2.0], 0.5, QuadConfig::with_rel_tol(1e-9)).unwrap();
        assert!(h1[0].abs() < 1e-9);
    }

    #[test]
    fn zeta_matches_cutoff_shape() {
        let cfg = MalliavinConfig::new(2, 0.4).unwrap();
        // |z| ≤ δ/4: pure power
        assert!((cfg.zeta(&[0.05]) - 0.05f64.powi(3)).abs() < 1e-15);
        // |z| > δ/2: zero
        assert_eq!(cfg.zeta(&[0.21]), 0.0);
        assert_eq!(cfg.zeta(&[0.9]), 0.0);
        // decreasing relative to the power inside the transition band
        let mid1 = cfg.zeta(&[0.12]) / 0.12f64.powi(3);
        let mid2 = cfg.zeta(&[0.18]) / 0.18f64.powi(3);
        assert!(0.0 < mid2 && mid2 < mid1 && mid1 < 1.0);
    }

    #[test]
    fn full_matrix_brownian_part() {
        // σ = I, no jumps: Σ⁽¹⁾ = t I, Σ⁽²⁾ = 0
        let m = SdeModel::builder(2)
            .sigma_column("1, 0")
            .unwrap()
            .sigma_column("0, 1")
            .unwrap()
            .build()
            .unwrap();
        let scheme = SimulationScheme::default_for(&m, 31);
        let mut rng = RngStream::new(31, 0);
        let path = simulate_path(&m, &scheme, &[0.0, 0.0], 0.7, &mut rng).unwrap();
        let cfg = MalliavinConfig::new(2, 0.4).unwrap();
        let sigma = accumulate_full_matrix(&path, &m, &cfg).unwrap();
        assert!((sigma[(0, 0)] - 0.7).abs() < 1e-9);
        assert!((sigma[(1, 1)] - 0.7).abs() < 1e-9);
        assert!(sigma[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn full_matrix_jump_part_matches_replay() {
        // additive g = z in d = 1: U = 1, K = 1, so Σ⁽²⁾ = Σ ζ(z) over jumps;
        // replaying the jump log directly is the oracle
        let m = SdeModel::builder(1)
            .jump_g("z1")
            .unwrap()
            .alpha(1.0)
            .build()
            .unwrap();
        let scheme = SimulationScheme {
            h: 1e-3,
            eps: 0.01,
            delta: 0.4,
            small_jump_mode: SmallJumpMode::Drop,
            seed: 32,
            thinning_bound: None,
        };
        let mut rng = RngStream::new(32, 0);
        let path = simulate_path(&m, &scheme, &[0.0], 1.0, &mut rng).unwrap();
        let cfg = MalliavinConfig::new(2, 0.4).unwrap();
        let sigma = accumulate_full_matrix(&path, &m, &cfg).unwrap();
        let replay: f64 = path.jumps.iter().map(|j| cfg.zeta(&j.mark)).sum();
        assert!(replay > 0.0, "expected contributing jumps");
        assert!((sigma[(0, 0)] - replay).abs() < 1e-12);
        assert!(sigma.is_psd(1e-12));

        // no jump channel at all ⇒ Σ⁽²⁾ = 0
        let m0 = SdeModel::builder(1).build().unwrap();
        let scheme0 = SimulationScheme::default_for(&m0, 33);
        let mut rng0 = RngStream::new(33, 0);
        let path0 = simulate_path(&m0, &scheme0, &[0.0], 0.3, &mut rng0).unwrap();
        let sigma0 = accumulate_full_matrix(&path0, &m0, &cfg).unwrap();
        assert_eq!(sigma0.max_abs(), 0.0);
    }

    #[test]
    fn full_matrix_mixed_channels_is_symmetric_psd() {
        // Brownian plus jump channels (local/nonlocal Grushin mix)
        let m = example("example3");
        let scheme = SimulationScheme::default_for(&m, 39);
        let cfg = MalliavinConfig::new(2, 0.3).unwrap();
        for stream in 0..5 {
            let mut rng = RngStream::new(39, stream);
            let path = simulate_path(&m, &scheme, &[0.4, -0.1], 0.8, &mut rng).unwrap();
            let sigma = accumulate_full_matrix(&path, &m, &cfg).unwrap();
            assert!((sigma[(0, 1)] - sigma[(1, 0)]).abs() < 1e-14);
            assert!(sigma.is_psd(1e-10), "stream {stream}");
            assert!(path.sigma_hat().is_psd(1e-10));
        }
    }

    #[test]
    fn kolmogorov_oracle_values() {
        // det Σ̂_t = t⁴/12 + O(t⁶)
        let s = kolmogorov_sigma_oracle(0.1);
        let det = s.det();
        assert!(
            (det - 8.333e-6).abs() / 8.333e-6 < 5e-3,
            "det {det:.6e} vs 8.333e-6"
        );
        // off-diagonals vanish at t = π
        let s = kolmogorov_sigma_oracle(std::f64::consts::PI);
        assert!(s[(0, 1)].abs() < 1e-15);
        // cross-check against numerical quadrature of the integrand
        let t = 0.8;
        let s = kolmogorov_sigma_oracle(t);
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let num = quad::integrate(
                |u| {
                    let k = [-u.sin(), u.cos()];
                    k[i] * k[j]
                },
                0.0,
                t,
                QuadConfig::default(),
            )
            .unwrap();
            assert!((s[(i, j)] - num).abs() < 1e-12);
        }
    }

    #[test]
    fn example4_path_sigma_hat_matches_oracle() {
        let m = example("example4");
        let scheme = SimulationScheme::default_for(&m, 34);
        let mut rng = RngStream::new(34, 0);
        let path = simulate_path(&m, &scheme, &[0.2, -0.4], 1.0, &mut rng).unwrap();
        let oracle = kolmogorov_sigma_oracle(1.0);
        let err = path.sigma_hat().sub(&oracle).max_abs();
        assert!(err < 1e-3, "entrywise error {err}");
    }

    #[test]
    fn laplace_deterministic_brownian() {
        // σ = I, g = 0: Σ̂ = t I deterministic, estimate = exp(−λ t) exactly
        let m = SdeModel::builder(1)
            .sigma_column("1")
            .unwrap()
            .build()
            .unwrap();
        let scheme = SimulationScheme::default_for(&m, 35);
        let rep = laplace_transform(
            &m,
            &scheme,
            &[0.0],
            &[1.0],
            0.5,
            &[0.5, 1.0, 2.0, 4.0, 8.0, 16.0],
            64,
            35,
        )
        .unwrap();
        assert!((rep.estimates[1] - (-0.5f64).exp()).abs() < 1e-9);
        assert!((rep.estimates[1] - 0.60653).abs() < 1e-5);
        let (_, gamma) = rep.fit.unwrap();
        assert!((gamma - 1.0).abs() < 1e-6, "gamma {gamma}");
        assert!(!rep.no_decay && !rep.non_monotone);
        // Σ̂ = 0.5·I is deterministic, so every quantile sits at det = 0.5
        for q in rep.det_quantiles {
            assert!((q - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_lambda_zero_is_one() {
        let m = SdeModel::builder(1)
            .sigma_column("1")
            .unwrap()
            .build()
            .unwrap();
        let scheme = SimulationScheme::default_for(&m, 36);
        let rep = laplace_transform(&m, &scheme, &[0.0], &[1.0], 0.5, &[0.0, 1.0], 16, 36).unwrap();
        assert_eq!(rep.estimates[0], 1.0);
    }

    #[test]
    fn laplace_rejects_bad_input() {
        let m = SdeModel::builder(1)
            .sigma_column("1")
            .unwrap()
            .build()
            .unwrap();
        let scheme = SimulationScheme::default_for(&m, 37);
        assert!(laplace_transform(&m, &scheme, &[0.0], &[2.0], 0.5, &[1.0, 2.0], 8, 37).is_err());
        assert!(laplace_transform(&m, &scheme, &[0.0], &[1.0], 0.5, &[2.0, 1.0], 8, 37).is_err());
    }

    #[test]
    fn degenerate_direction_gets_filled_by_motion() {
        // nonlocal Grushin: u = (0,1) is degenerate at the start (x1 = 0) but
        // the first coordinate moves immediately and fills it
        let m = example("example2");
        let scheme = SimulationScheme::default_for(&m, 38);
        let q = quadform_samples(&m, &scheme, &[0.0, 0.0], &[0.0, 1.0], 1.0, 1000).unwrap();
        assert_eq!(q.len(), 1000);
        let min = q.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "min quadform {min}");
    }

    #[test]
    fn direction_sweep_unit_norm() {
        for d in 1..=4 {
            for u in direction_sweep(d, 16) {
                let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
}
