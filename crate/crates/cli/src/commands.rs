use std::fs::File;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use hypojump::analyze::{char_function, default_grid, kde, silverman_bandwidth};
use hypojump::expr::{self, VarSet};
use hypojump::malliavin::{direction_sweep, laplace_transform};
use hypojump::model::{self, ModelSource, SchemeSection};
use hypojump::quad::QuadConfig;
use hypojump::report::{
    write_char_csv, write_density_csv, write_ensemble_csv, write_laplace_csv, Envelope,
};
use hypojump::simulate::{simulate_ensemble, EnsembleOptions, SimulationScheme};
use hypojump::symmetrize::{verify_identity, KernelTransform};
use hypojump::vecfield::{uniform_check, DomainBox};
use hypojump::{RngStream, SdeModel};

use crate::CommonOpts;

pub enum Outcome {
    Success,
    AnalysisFailed(String),
}

// ---- small parsers -------------------------------------------------------------

fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("invalid number `{}`", s.trim()))
        })
        .collect()
}

fn parse_box(text: &str, dim: usize) -> Result<DomainBox> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for part in text.split(',') {
        let (a, b) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| anyhow!("box axis `{part}` must look like lo:hi"))?;
        lo.push(a.trim().parse::<f64>().context("invalid box bound")?);
        hi.push(b.trim().parse::<f64>().context("invalid box bound")?);
    }
    if lo.len() == 1 && dim > 1 {
        lo = vec![lo[0]; dim];
        hi = vec![hi[0]; dim];
    }
    if lo.len() != dim {
        bail!("box has {} axes but the model dimension is {dim}", lo.len());
    }
    Ok(DomainBox::new(lo, hi)?)
}

fn parse_x0(text: &str, dim: usize) -> Result<Vec<f64>> {
    let v = parse_f64_list(text)?;
    if v.len() == 1 && dim > 1 {
        return Ok(vec![v[0]; dim]);
    }
    if v.len() != dim {
        bail!(
            "x0 has {} entries but the model dimension is {dim}",
            v.len()
        );
    }
    Ok(v)
}

fn load_sde(source: &str) -> Result<(SdeModel, Option<SchemeSection>)> {
    let (loaded, scheme) = model::load(source)?;
    let m = match loaded {
        ModelSource::Sde(m) => m,
        ModelSource::Kinetic(k) => k.to_sde()?,
    };
    Ok((m, scheme))
}

fn build_scheme(
    m: &SdeModel,
    seed: Option<u64>,
    file_scheme: Option<&SchemeSection>,
    h: Option<f64>,
    eps: Option<f64>,
    delta: Option<f64>,
    mode: &str,
) -> Result<SimulationScheme> {
    let mut s = SimulationScheme::default_for(m, seed.unwrap_or(0));
    if let Some(fs) = file_scheme {
        if let Some(v) = fs.h {
            s.h = v;
        }
        if let Some(v) = fs.eps {
            s.eps = v;
        }
        if let Some(v) = fs.delta {
            s.delta = v;
        }
        if let Some(mode) = &fs.small_jump_mode {
            s.small_jump_mode = mode.parse()?;
        }
        if let Some(v) = fs.seed {
            s.seed = v;
        }
    }
    if let Some(v) = h {
        s.h = v;
    }
    if let Some(v) = eps {
        s.eps = v;
    }
    if let Some(v) = delta {
        s.delta = v;
    }
    s.small_jump_mode = mode.parse()?;
    // an explicit CLI seed wins over the file seed
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate_against(m.zmax)?;
    Ok(s)
}

fn emit_report<T: serde::Serialize>(common: &CommonOpts, kind: &str, report: &T) -> Result<()> {
    let envelope = Envelope::new(kind, report);
    let text = envelope.to_json_pretty();
    if let Some(path) = &common.out {
        std::fs::write(path, &text).with_context(|| format!("writing {path}"))?;
    }
    if common.json || common.out.is_none() {
        println!("{text}");
    }
    Ok(())
}

// ---- subcommands ---------------------------------------------------------------

pub fn check(
    common: &CommonOpts,
    model_src: &str,
    j0: usize,
    box_text: &str,
    points: usize,
    c0: f64,
    dedup: bool,
) -> Result<Outcome> {
    let (m, _) = load_sde(model_src)?;
    let hierarchy = m.hierarchy(j0, dedup)?;
    let domain = parse_box(box_text, m.dim)?;
    let report = uniform_check(&hierarchy, &domain, points, c0, common.seed.unwrap_or(0))?;
    eprintln!(
        "spanning check: infimum {:.6e} at {:?} over {} points (c0 = {c0})",
        report.infimum, report.argmin, report.sample_count
    );
    let pass = report.pass;
    emit_report(common, "hormander_report", &report)?;
    if pass {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::AnalysisFailed(format!(
            "spanning infimum {:.3e} < c0 = {c0}",
            report.infimum
        )))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    common: &CommonOpts,
    model_src: &str,
    horizon: f64,
    x0_text: &str,
    paths: usize,
    h: Option<f64>,
    eps: Option<f64>,
    delta: Option<f64>,
    mode: &str,
    sigma_hat: bool,
) -> Result<Outcome> {
    let (m, file_scheme) = load_sde(model_src)?;
    let scheme = build_scheme(&m, common.seed, file_scheme.as_ref(), h, eps, delta, mode)?;
    let x0 = parse_x0(x0_text, m.dim)?;
    let opts = EnsembleOptions {
        sigma_hat,
        det_j: false,
    };
    let res = simulate_ensemble(&m, &scheme, &x0, horizon, paths, opts)?;
    match &common.out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("creating {path}"))?;
            write_ensemble_csv(&mut f, &res, sigma_hat)?;
        }
        None => {
            if !common.json {
                let mut out = std::io::stdout().lock();
                write_ensemble_csv(&mut out, &res, sigma_hat)?;
            }
        }
    }
    let (mean_first, se_first) = res.mean_of(|x| x[0]);
    let summary = json!({
        "model": m.name,
        "dim": m.dim,
        "paths": paths,
        "failures": res.failures,
        "horizon": horizon,
        "scheme": scheme,
        "mean_x1": mean_first,
        "stderr_x1": se_first,
    });
    if common.json {
        println!(
            "{}",
            Envelope::new("ensemble_summary", &summary).to_json_pretty()
        );
    } else {
        eprintln!(
            "simulated {paths} paths ({} failures), E[x1] = {mean_first:.6} ± {se_first:.2e}",
            res.failures
        );
    }
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn density(
    common: &CommonOpts,
    model_src: &str,
    horizon: f64,
    x0_text: &str,
    paths: usize,
    grid_points: usize,
    bandwidth: &str,
    char_max_xi: f64,
) -> Result<Outcome> {
    let (m, file_scheme) = load_sde(model_src)?;
    let scheme = build_scheme(
        &m,
        common.seed,
        file_scheme.as_ref(),
        None,
        None,
        None,
        "drop",
    )?;
    let x0 = parse_x0(x0_text, m.dim)?;
    let res = simulate_ensemble(&m, &scheme, &x0, horizon, paths, EnsembleOptions::default())?;
    let states: Vec<Vec<f64>> = res.successes().map(|p| p.state.clone()).collect();
    if states.is_empty() {
        bail!("every path hit the blow-up guard");
    }
    let prefix = common
        .out
        .clone()
        .ok_or_else(|| anyhow!("density needs --out <prefix> for its CSV outputs"))?;
    let xi_grid: Vec<f64> = (0..=160).map(|k| char_max_xi * k as f64 / 160.0).collect();
    let mut density_file = File::create(format!("{prefix}_density.csv"))?;
    let mut char_file = File::create(format!("{prefix}_char.csv"))?;
    let mut axes_summary = Vec::new();
    for axis in 0..m.dim {
        let marginal: Vec<f64> = states.iter().map(|x| x[axis]).collect();
        let bw = match bandwidth {
            "auto" => silverman_bandwidth(&marginal),
            v => v.parse::<f64>().context("invalid bandwidth")?,
        };
        let grid = default_grid(&marginal, grid_points);
        let est = kde(&marginal, bw, &grid)?;
        let est_half = kde(&marginal, bw / 2.0, &grid)?;
        let stability = est.sup_distance(&est_half) / est.max_value();
        write_density_csv(&mut density_file, axis + 1, &est)?;
        let mut u = vec![0.0; m.dim];
        u[axis] = 1.0;
        let prof = char_function(&states, &u, &xi_grid)?;
        write_char_csv(&mut char_file, axis + 1, &prof)?;
        axes_summary.push(json!({
            "axis": axis + 1,
            "bandwidth": bw,
            "kde_integral": est.integral(),
            "kde_halving_sup_change": stability,
            "noise_floor": prof.noise_floor,
            "decay_crossing": prof.decay_crossing,
            "decays_before_max_xi": prof.decay_crossing.is_some(),
        }));
    }
    let all_decay = axes_summary
        .iter()
        .all(|a| a["decays_before_max_xi"].as_bool().unwrap_or(false));
    let summary = json!({
        "model": m.name,
        "paths": paths,
        "failures": res.failures,
        "horizon": horizon,
        "char_max_xi": char_max_xi,
        "axes": axes_summary,
        // engineering heuristic, not a proof: decay of |φ̂| below the noise
        // floor on every axis is the expected signature of a smooth law
        "smoothness_proxy_pass": all_decay,
    });
    let envelope = Envelope::new("density_report", &summary);
    std::fs::write(format!("{prefix}_summary.json"), envelope.to_json_pretty())?;
    if common.json {
        println!("{}", envelope.to_json_pretty());
    }
    eprintln!("density written to {prefix}_density.csv, {prefix}_char.csv, {prefix}_summary.json");
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn laplace(
    common: &CommonOpts,
    model_src: &str,
    horizon: f64,
    x0_text: &str,
    u_text: Option<&str>,
    u_sweep: Option<usize>,
    lambdas_text: &str,
    paths: usize,
) -> Result<Outcome> {
    let (m, file_scheme) = load_sde(model_src)?;
    let scheme = build_scheme(
        &m,
        common.seed,
        file_scheme.as_ref(),
        None,
        None,
        None,
        "drop",
    )?;
    let x0 = parse_x0(x0_text, m.dim)?;
    let lambdas = parse_f64_list(lambdas_text)?;
    let directions: Vec<Vec<f64>> = match (u_text, u_sweep) {
        (Some(_), Some(_)) => bail!("use either --u or --u-sweep, not both"),
        (Some(text), None) => {
            let mut u = parse_f64_list(text)?;
            let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                bail!("direction u must be nonzero");
            }
            u.iter_mut().for_each(|v| *v /= norm);
            vec![u]
        }
        (None, Some(n)) => direction_sweep(m.dim, n.max(1)),
        (None, None) => {
            let mut u = vec![0.0; m.dim];
            u[0] = 1.0;
            vec![u]
        }
    };
    // worst direction = slowest decay = largest estimate at the top λ
    let mut worst: Option<(Vec<f64>, hypojump::malliavin::LaplaceReport)> = None;
    for u in directions {
        let rep = laplace_transform(&m, &scheme, &x0, &u, horizon, &lambdas, paths, scheme.seed)?;
        let key = *rep.estimates.last().unwrap();
        if worst
            .as_ref()
            .is_none_or(|(_, w)| key > *w.estimates.last().unwrap())
        {
            worst = Some((u, rep));
        }
    }
    let (u, rep) = worst.expect("at least one direction");
    match &common.out {
        Some(path) => {
            let mut f = File::create(path).with_context(|| format!("creating {path}"))?;
            write_laplace_csv(&mut f, &rep)?;
        }
        None => {
            if !common.json {
                let mut out = std::io::stdout().lock();
                write_laplace_csv(&mut out, &rep)?;
            }
        }
    }
    let summary = json!({
        "model": m.name,
        "direction": u,
        "horizon": horizon,
        "report": rep,
    });
    if common.json {
        println!(
            "{}",
            Envelope::new("laplace_report", &summary).to_json_pretty()
        );
    } else if let Some((c2, gamma)) = rep.fit {
        eprintln!(
            "fitted decay: c2 = {c2:.4}, gamma = {gamma:.4} over {} points",
            rep.fit_points
        );
    }
    if rep.no_decay {
        return Ok(Outcome::AnalysisFailed(
            "no observed decay: spanning failure or horizon too small".into(),
        ));
    }
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn symmetrize(
    common: &CommonOpts,
    alpha: f64,
    radius: f64,
    kernel_text: &str,
    kappa0: f64,
    verify_text: Option<&str>,
    state_dim: usize,
    mark_dim: usize,
    at_text: Option<&str>,
) -> Result<Outcome> {
    let vars = VarSet::states_marks(state_dim, mark_dim);
    let kernel = expr::parse(kernel_text, &vars)?;
    let transform = KernelTransform::from_expr(
        &kernel,
        state_dim,
        alpha,
        radius,
        kappa0,
        QuadConfig::default(),
    )?;
    let x = match at_text {
        Some(text) => parse_f64_list(text)?,
        None => vec![0.0; state_dim],
    };
    if x.len() != state_dim {
        bail!("--at must supply {state_dim} coordinates");
    }

    // observed bounds of a(x, z) against κ0^(±1/α)
    let mut rng = RngStream::new(common.seed.unwrap_or(0), 0);
    let (mut a_min, mut a_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..2000 {
        let dir = rng.sphere_direction(mark_dim);
        let r = radius * (1e-3 + 0.999 * rng.uniform());
        let z: Vec<f64> = dir.iter().map(|o| o * r).collect();
        let a = transform.a(&x, &z)?;
        a_min = a_min.min(a);
        a_max = a_max.max(a);
    }
    let bound_lo = kappa0.powf(-1.0 / alpha);
    let bound_hi = kappa0.powf(1.0 / alpha);
    let bounds_ok = a_min >= bound_lo - 1e-9 && a_max <= bound_hi + 1e-9;

    // gradient at zero against κ(x,0)^(1/α)
    let fd = transform.grad_zero_fd(&x, mark_dim, 1e-4)?;
    let expect = transform.grad_zero(&x, mark_dim);
    let mut grad_err: f64 = 0.0;
    for i in 0..mark_dim {
        for j in 0..mark_dim {
            let want = if i == j { expect } else { 0.0 };
            grad_err = grad_err.max((fd[(i, j)] - want).abs());
        }
    }

    let identity = match verify_text {
        Some(ftext) => {
            let fvars = VarSet::new((1..=mark_dim).map(|i| format!("z{i}")).collect());
            let fexpr = expr::parse(ftext, &fvars)?;
            let f = move |z: &[f64]| fexpr.eval(z).unwrap_or(f64::NAN);
            Some(verify_identity(&transform, &x, mark_dim, &f, 48)?)
        }
        None => None,
    };

    let report = json!({
        "alpha": alpha,
        "radius": radius,
        "kappa0": kappa0,
        "at": x,
        "a_bounds": {
            "observed_min": a_min,
            "observed_max": a_max,
            "lower": bound_lo,
            "upper": bound_hi,
            "within_bounds": bounds_ok,
        },
        "gradient_at_zero": {
            "finite_difference_error": grad_err,
            "expected_diagonal": expect,
        },
        "identity": identity,
    });
    emit_report(common, "symmetrize_report", &report)?;
    if !bounds_ok {
        return Ok(Outcome::AnalysisFailed(format!(
            "a(x, z) escaped [{bound_lo:.4}, {bound_hi:.4}]: observed [{a_min:.4}, {a_max:.4}]"
        )));
    }
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn kinetic(
    common: &CommonOpts,
    model_src: &str,
    j0: usize,
    box_text: &str,
    points: usize,
    c0: f64,
    horizon: f64,
    paths: usize,
) -> Result<Outcome> {
    let (loaded, _) = model::load(model_src)?;
    let km = match loaded {
        ModelSource::Kinetic(k) => k,
        ModelSource::Sde(_) => bail!("`{model_src}` is not a kinetic model"),
    };
    let sde = km.to_sde()?;
    let hierarchy = sde.hierarchy(j0, false)?;
    let domain = parse_box(box_text, sde.dim)?;
    let check = uniform_check(&hierarchy, &domain, points, c0, common.seed.unwrap_or(0))?;

    // transform diagnostics at a probe state
    let transform = km.transform(QuadConfig::default())?;
    let probe = vec![0.0; sde.dim];
    let fd = transform.grad_zero_fd(&probe, km.spatial_dim, 1e-4)?;
    let expect = transform.grad_zero(&probe, km.spatial_dim);
    let identity = verify_identity(
        &transform,
        &probe,
        km.spatial_dim,
        &|z: &[f64]| z.iter().map(|v| v * v).sum::<f64>(),
        32,
    )?;

    let ensemble = if horizon > 0.0 && paths > 0 {
        let mut scheme = SimulationScheme::default_for(&sde, common.seed.unwrap_or(0));
        scheme.h = 2e-3;
        scheme.eps = 0.01 * km.delta;
        scheme.delta = km.delta;
        let res = simulate_ensemble(
            &sde,
            &scheme,
            &probe,
            horizon,
            paths,
            EnsembleOptions::default(),
        )?;
        let (mean_v, se_v) = res.mean_of(|s| s[km.spatial_dim]);
        Some(json!({
            "paths": paths,
            "failures": res.failures,
            "horizon": horizon,
            "mean_velocity": mean_v,
            "stderr_velocity": se_v,
        }))
    } else {
        None
    };

    let pass = check.pass;
    let report = json!({
        "spatial_dim": km.spatial_dim,
        "alpha": km.alpha,
        "delta": km.delta,
        "kappa0": km.kappa0,
        "sde_dim": sde.dim,
        "spanning": check,
        "gradient_at_zero": {
            "finite_difference": fd.data(),
            "expected_diagonal": expect,
        },
        "identity": identity,
        "ensemble": ensemble,
    });
    emit_report(common, "kinetic_report", &report)?;
    if pass {
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::AnalysisFailed(format!(
            "reduced model fails the spanning check: infimum {:.3e}",
            check.infimum
        )))
    }
}

pub fn selftest() -> Result<Outcome> {
    let mut failed = 0usize;
    for outcome in hypojump::selftest::run_all() {
        match outcome {
            Ok(report) => {
                println!(
                    "[{}] {} ({:.1}s)",
                    if report.passed { "PASS" } else { "FAIL" },
                    report.name,
                    report.seconds
                );
                if !report.passed {
                    eprintln!("  {}", report.details);
                    failed += 1;
                }
            }
            Err(e) => {
                println!("[FAIL] check aborted: {e}");
                failed += 1;
            }
        }
    }
    if failed == 0 {
        println!("selftest: all checks passed");
        Ok(Outcome::Success)
    } else {
        Ok(Outcome::AnalysisFailed(format!("{failed} check(s) failed")))
    }
}
