//! Adaptive Gauss–Kronrod quadrature, radial integration against the
//! singular weight t^(−1−α), bracketed root finding and sphere grids.

use crate::error::{Error, Result};

// 15-point Kronrod abscissae / weights with the embedded 7-point Gauss rule.
#[allow(clippy::excessive_precision)]
const XGK15: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
#[allow(clippy::excessive_precision)]
const WG7: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];
#[allow(clippy::excessive_precision)]
const WGK15: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

/// One GK15 panel; returns (integral, error estimate).
fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let center = 0.5 * (a + b);
    let fc = f(center);
    let mut kronrod = fc * WGK15[7];
    let mut gauss = fc * WG7[3];
    for j in 0..7 {
        let dx = half * XGK15[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod += WGK15[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG7[j / 2] * (f1 + f2);
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Quadrature tolerances and budget.
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_panels: 4096,
        }
    }
}

impl QuadConfig {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        QuadConfig {
            rel_tol,
            ..Default::default()
        }
    }
}

/// Adaptive bisection over [a, b]: always split the panel with the largest
/// error estimate until the summed estimate meets the tolerance.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, cfg: QuadConfig) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fref: &mut dyn FnMut(f64) -> f64 = &mut f;
    let (v, e) = gk15(fref, a, b);
    let mut panels = vec![(e, a, b, v)];
    let mut total = v;
    let mut err = e;
    while err > cfg.abs_tol + cfg.rel_tol * total.abs() {
        if panels.len() >= cfg.max_panels {
            return Err(Error::Quadrature(format!(
                "tolerance not reached after {} panels (estimate {total:.6e}, error {err:.3e})",
                panels.len()
            )));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .map(|(i, _)| i)
            .unwrap();
        let (_, pa, pb, pv) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(fref, pa, mid);
        let (v2, e2) = gk15(fref, mid, pb);
        total += v1 + v2 - pv;
        panels.push((e1, pa, mid, v1));
        panels.push((e2, mid, pb, v2));
        err = panels.iter().map(|p| p.0).sum();
    }
    Ok(total)
}

/// ∫_{r0}^{r1} g(t) dt where g blows up like t^(−1−α) toward small t:
/// geometric panels accumulating at r0. A rough single-rule pass fixes the
/// global error budget, then each panel is refined adaptively against its
/// share; without the global scale, tiny panels near r0 would chase absolute
/// tolerances below the integrand's own rounding noise.
pub fn integrate_radial(
    mut g: impl FnMut(f64) -> f64,
    r0: f64,
    r1: f64,
    cfg: QuadConfig,
) -> Result<f64> {
    if r0 >= r1 {
        return Ok(0.0);
    }
    if r0 <= 0.0 {
        return Err(Error::Quadrature(
            "radial lower bound must be positive".into(),
        ));
    }
    let ratio: f64 = 2.0;
    let mut edges = vec![r1];
    let mut t = r1;
    while t / ratio > r0 {
        t /= ratio;
        edges.push(t);
    }
    edges.push(r0);

    let gref: &mut dyn FnMut(f64) -> f64 = &mut g;
    let mut rough_total = 0.0;
    let mut rough_abs = 0.0;
    for w in edges.windows(2) {
        let (v, _) = gk15(gref, w[1], w[0]);
        rough_total += v;
        rough_abs += v.abs();
    }
    let target = cfg.abs_tol + cfg.rel_tol * rough_total.abs().max(1e-3 * rough_abs);
    let panel_cfg = QuadConfig {
        rel_tol: cfg.rel_tol * 0.5,
        abs_tol: target / (2.0 * edges.len() as f64),
        max_panels: cfg.max_panels,
    };
    let mut sum = 0.0;
    for w in edges.windows(2) {
        sum += integrate(&mut g, w[1], w[0], panel_cfg)?;
    }
    Ok(sum)
}

/// Solve f(x) = 0 on a bracket [a, b] with f(a), f(b) of opposite sign.
/// Bisection with secant refinement; relative tolerance on x.
pub fn solve_bracketed(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootFind(format!(
            "root not bracketed on [{a:.6e}, {b:.6e}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    for _ in 0..200 {
        if (b - a).abs() <= rel_tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        // secant proposal, clamped away from the bracket edges
        let mut x = b - fb * (b - a) / (fb - fa);
        let mid = 0.5 * (a + b);
        let quarter = 0.25 * (b - a);
        if !x.is_finite() || x <= a + 0.01 * quarter || x >= b - 0.01 * quarter {
            x = mid;
        }
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == fa.signum() {
            a = x;
            fa = fx;
        } else {
            b = x;
            fb = fx;
        }
    }
    Ok(0.5 * (a + b))
}

/// Quadrature grid over the unit sphere S^{d−1}; weights sum to its surface
/// measure. d = 1 is the two-point set {−1, +1}, d = 2 a periodic trapezoid
/// in angle, d = 3 Gauss–Legendre in cos θ times a trapezoid in azimuth.
pub fn sphere_grid(dim: usize, resolution: usize) -> Vec<(Vec<f64>, f64)> {
    match dim {
        1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
        2 => {
            let n = resolution.max(8);
            let w = std::f64::consts::TAU / n as f64;
            (0..n)
                .map(|k| {
                    let th = std::f64::consts::TAU * k as f64 / n as f64;
                    (vec![th.cos(), th.sin()], w)
                })
                .collect()
        }
        3 => {
            let n_polar = resolution.max(8);
            let n_azim = 2 * n_polar;
            let (nodes, weights) = gauss_legendre(n_polar);
            let wphi = std::f64::consts::TAU / n_azim as f64;
            let mut out = Vec::with_capacity(n_polar * n_azim);
            for (mu, wmu) in nodes.iter().zip(&weights) {
                let s = (1.0 - mu * mu).sqrt();
                for k in 0..n_azim {
                    let phi = std::f64::consts::TAU * k as f64 / n_azim as f64;
                    out.push((vec![s * phi.cos(), s * phi.sin(), *mu], wmu * wphi));
                }
            }
            out
        }
        _ => panic!("sphere_grid supports d <= 3; use Monte Carlo directions above"),
    }
}

/// Surface measure of S^{d−1}.
pub fn sphere_surface(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => std::f64::consts::TAU,
        3 => 4.0 * std::f64::consts::PI,
        d => {
            // 2 π^{d/2} / Γ(d/2)
            let half = d as f64 / 2.0;
            2.0 * std::f64::consts::PI.powf(half) / gamma(half)
        }
    }
}

fn gamma(x: f64) -> f64 {
    // Lanczos g=7, n=9
    #[allow(clippy::excessive_precision)]
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}

/// Gauss–Legendre nodes/weights on [−1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre polynomial and derivative by recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let v = integrate(
            |x| x * x * x - 2.0 * x + 1.0,
            -1.0,
            3.0,
            QuadConfig::default(),
        )
        .unwrap();
        // antiderivative x^4/4 - x^2 + x
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn integrates_oscillatory() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, 2.0, QuadConfig::default()).unwrap();
        let exact = (1.0 - (20.0f64).cos()) / 10.0;
        assert!((v - exact).abs() < 1e-11);
    }

    #[test]
    fn radial_power_law() {
        // ∫_r^R t^(−2) dt = 1/r − 1/R
        let v = integrate_radial(|t| t.powi(-2), 1e-4, 1.0, QuadConfig::default()).unwrap();
        assert!((v - (1e4 - 1.0)).abs() / 1e4 < 1e-10);
    }

    #[test]
    fn bracketed_root() {
        let r = solve_bracketed(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2.0f64.sqrt()).abs() < 1e-11);
        assert!(solve_bracketed(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_err());
    }

    #[test]
    fn sphere_weights_sum_to_surface() {
        for d in 1..=3 {
            let grid = sphere_grid(d, 24);
            let total: f64 = grid.iter().map(|(_, w)| w).sum();
            assert!(
                (total - sphere_surface(d)).abs() < 1e-10,
                "d={d}: {total} vs {}",
                sphere_surface(d)
            );
            for (omega, _) in &grid {
                let norm: f64 = omega.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_grid_integrates_quadratics() {
        // ∫_{S^{d-1}} ω_i ω_j dω = S_{d-1}/d δ_ij
        for d in 2..=3 {
            let grid = sphere_grid(d, 24);
            for i in 0..d {
                for j in 0..d {
                    let v: f64 = grid.iter().map(|(o, w)| o[i] * o[j] * w).sum();
                    let expect = if i == j {
                        sphere_surface(d) / d as f64
                    } else {
                        0.0
                    };
                    assert!((v - expect).abs() < 1e-9, "d={d} ({i},{j}): {v}");
                }
            }
        }
    }

    #[test]
    fn gamma_half_integers() {
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        assert!((gamma(4.0) - 6.0).abs() < 1e-10);
        assert!((sphere_surface(4) - 2.0 * std::f64::consts::PI.powi(2)).abs() < 1e-9);
    }
}
