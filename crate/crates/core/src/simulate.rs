//! Path simulation for jump SDEs: Euler–Maruyama between jumps, exact jump
//! insertion into the time grid, the Jacobian flow J and its inverse K, and
//! accumulation of the reduced covariance matrix
//! Σ̂_t = ∫₀ᵗ K_s (A Aᵀ + Ã Ãᵀ)(X_s) K_sᵀ ds.
//!
//! K is advanced by the exact inverse of each one-step factor of J, so
//! J·K = I holds to rounding accumulation along every path. Ensembles give one
//! RNG stream per path index and collect results in index order, which makes
//! outputs bit-identical regardless of the worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::Mat;
use crate::model::{Jump, SdeModel};
use crate::quad::{self, QuadConfig};
use crate::rng::RngStream;
use crate::symmetrize::KernelTransform;

const BLOWUP_NORM: f64 = 1e12;

/// What replaces the jumps below the truncation radius eps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SmallJumpMode {
    /// Discard them. Unbiased in mean for odd g against the symmetric mark
    /// measure; the lost variance is O(eps^(2−α)).
    Drop,
    /// Replace them by a Brownian term with the matched covariance
    /// ∇_z g(x,0) · C_eps · ∇_z g(x,0)ᵀ.
    Gaussian,
}

impl std::str::FromStr for SmallJumpMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(SmallJumpMode::Drop),
            "gaussian" => Ok(SmallJumpMode::Gaussian),
            other => Err(Error::config(format!(
                "unknown small-jump mode `{other}` (use drop|gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimulationScheme {
    /// Base time step; jump times are inserted exactly between grid points.
    pub h: f64,
    /// Truncation radius for simulated jumps.
    pub eps: f64,
    /// Bookkeeping radius splitting "small" (compensated-region) from
    /// "large" jumps in the jump log; also the default Malliavin cutoff.
    pub delta: f64,
    pub small_jump_mode: SmallJumpMode,
    pub seed: u64,
    /// Dominating-kernel bound for thinned state-dependent channels;
    /// defaults to the model's own κ0.
    pub thinning_bound: Option<f64>,
}

impl SimulationScheme {
    pub fn new(h: f64, eps: f64, delta: f64, seed: u64) -> Result<SimulationScheme> {
        let s = SimulationScheme {
            h,
            eps,
            delta,
            small_jump_mode: SmallJumpMode::Drop,
            seed,
            thinning_bound: None,
        };
        s.validate_against(f64::INFINITY)?;
        Ok(s)
    }

    /// Default scheme for a model: h = 1e-3, eps = 0.01·zmax, delta = 0.1·zmax.
    pub fn default_for(model: &SdeModel, seed: u64) -> SimulationScheme {
        let zmax = model.zmax;
        SimulationScheme {
            h: 1e-3,
            eps: 0.01 * zmax,
            delta: 0.1 * zmax,
            small_jump_mode: SmallJumpMode::Drop,
            seed,
            thinning_bound: None,
        }
    }

    pub fn with_mode(mut self, mode: SmallJumpMode) -> Self {
        self.small_jump_mode = mode;
        self
    }

    pub fn validate_against(&self, zmax: f64) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::config("scheme step h must be positive"));
        }
        if !(0.0 < self.eps && self.eps <= self.delta && self.delta <= zmax) {
            return Err(Error::config(format!(
                "need 0 < eps <= delta <= zmax, got eps={}, delta={}, zmax={zmax}",
                self.eps, self.delta
            )));
        }
        Ok(())
    }
}

/// One proposed jump of the driving noise.
#[derive(Debug, Clone)]
pub struct JumpEvent {
    pub t: f64,
    pub mark: Vec<f64>,
    /// Thinning outcome; fixed-kernel channels accept everything up front.
    pub accepted: bool,
    channel: JumpChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JumpChannel {
    /// Marks from the truncated power-law measure applied through g.
    Plain,
    /// Kinetic small-jump channel (transformed through Φ).
    KineticSmall,
    /// Kinetic large-jump channel (additive, thinned against κ0).
    KineticLarge,
}

/// Poisson rate of marks with radius in [r_lo, r_hi) under dz/|z|^(m+α).
pub fn jump_rate(alpha: f64, r_lo: f64, r_hi: f64, mark_dim: usize) -> f64 {
    let tail = if r_hi.is_finite() {
        r_hi.powf(-alpha)
    } else {
        0.0
    };
    quad::sphere_surface(mark_dim) * (r_lo.powf(-alpha) - tail) / alpha
}

fn sample_radius(alpha: f64, r_lo: f64, r_hi: f64, u: f64) -> f64 {
    let tail = if r_hi.is_finite() {
        r_hi.powf(-alpha)
    } else {
        0.0
    };
    (r_lo.powf(-alpha) - u * (r_lo.powf(-alpha) - tail)).powf(-1.0 / alpha)
}

#[allow(clippy::too_many_arguments)]
fn sample_channel(
    alpha: f64,
    r_lo: f64,
    r_hi: f64,
    mark_dim: usize,
    horizon: f64,
    rate_scale: f64,
    channel: JumpChannel,
    rng: &mut RngStream,
) -> Vec<JumpEvent> {
    let rate = jump_rate(alpha, r_lo, r_hi, mark_dim) * rate_scale;
    let mut events = Vec::new();
    if rate <= 0.0 {
        return events;
    }
    let mut t = 0.0;
    loop {
        t += rng.exponential(rate);
        if t >= horizon {
            break;
        }
        let dir = rng.sphere_direction(mark_dim);
        let r = sample_radius(alpha, r_lo, r_hi, rng.uniform());
        events.push(JumpEvent {
            t,
            mark: dir.into_iter().map(|o| o * r).collect(),
            accepted: true,
            channel,
        });
    }
    events
}

/// Sample the jump skeleton on [0, T]: Poisson times with the exact truncated
/// rate, directions uniform on the sphere, radii by inverse CDF.
pub fn sample_jumps(
    alpha: f64,
    eps: f64,
    zmax: f64,
    mark_dim: usize,
    horizon: f64,
    rng: &mut RngStream,
) -> Result<Vec<JumpEvent>> {
    if !(eps > 0.0 && eps < zmax) {
        return Err(Error::config(format!(
            "need 0 < eps < zmax, got {eps}, {zmax}"
        )));
    }
    Ok(sample_channel(
        alpha,
        eps,
        zmax,
        mark_dim,
        horizon,
        1.0,
        JumpChannel::Plain,
        rng,
    ))
}

/// One applied jump along a path.
#[derive(Debug, Clone)]
pub struct JumpRecord {
    pub t: f64,
    pub mark: Vec<f64>,
    pub accepted: bool,
    /// |mark| < scheme.delta (the compensated-region tag).
    pub small: bool,
    /// Inverse Jacobian just before the jump (present when the flow is tracked).
    pub k_before: Option<Mat>,
}

/// One simulated trajectory with its flows and accumulated matrices.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jacobians: Vec<Mat>,
    pub inverses: Vec<Mat>,
    /// Σ̂ accumulated up to each grid time.
    pub sigma_hats: Vec<Mat>,
    pub jumps: Vec<JumpRecord>,
}

impl PathSample {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn sigma_hat(&self) -> &Mat {
        self.sigma_hats.last().unwrap()
    }

    /// max over the grid of ‖J_t K_t − I‖ (largest absolute entry).
    pub fn flow_defect(&self) -> f64 {
        let d = self.states[0].len();
        let eye = Mat::identity(d);
        self.jacobians
            .iter()
            .zip(&self.inverses)
            .map(|(j, k)| j.matmul(k).sub(&eye).max_abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.states
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

// ---- compiled model ---------------------------------------------------------

enum CompiledJump {
    None,
    Symbolic {
        g: Vec<Expr>,
        /// ∇_x g, d×d row-major, over (x, z).
        gx: Vec<Expr>,
    },
    Kinetic {
        transform: KernelTransform,
        kappa: Expr,
        kappa0: f64,
        delta: f64,
        d0: usize,
    },
}

/// Expression Jacobians and jump machinery precomputed once per model.
pub struct CompiledSde<'m> {
    model: &'m SdeModel,
    drift: Vec<Expr>,
    drift_jac: Vec<Expr>,
    sigma: Vec<Vec<Expr>>,
    sigma_jac: Vec<Vec<Expr>>,
    /// Columns of Ã(x) = ∂_z g(x, 0).
    atilde_cols: Vec<Vec<Expr>>,
    jump: CompiledJump,
}

impl<'m> CompiledSde<'m> {
    pub fn new(model: &'m SdeModel) -> Result<CompiledSde<'m>> {
        let d = model.dim;
        let drift: Vec<Expr> = model.drift.components().to_vec();
        let mut drift_jac = Vec::with_capacity(d * d);
        for c in &drift {
            for j in 0..d {
                drift_jac.push(c.diff(j).simplify());
            }
        }
        let mut sigma = Vec::new();
        let mut sigma_jac = Vec::new();
        for col in &model.diffusion {
            sigma.push(col.components().to_vec());
            let mut jac = Vec::with_capacity(d * d);
            for c in col.components() {
                for j in 0..d {
                    jac.push(c.diff(j).simplify());
                }
            }
            sigma_jac.push(jac);
        }
        let atilde_cols: Vec<Vec<Expr>> = model
            .jump_fields()?
            .into_iter()
            .map(|f| f.components().to_vec())
            .collect();
        let jump = match &model.jump {
            Jump::None => CompiledJump::None,
            Jump::Symbolic(g) => {
                let mut gx = Vec::with_capacity(d * d);
                for gi in g {
                    for j in 0..d {
                        gx.push(gi.diff(j).simplify());
                    }
                }
                CompiledJump::Symbolic { g: g.clone(), gx }
            }
            Jump::Kinetic(k) => CompiledJump::Kinetic {
                transform: KernelTransform::from_expr(
                    &k.kappa,
                    model.dim,
                    model.alpha,
                    k.delta,
                    k.kappa0,
                    QuadConfig::with_rel_tol(1e-11),
                )?,
                kappa: k.kappa.clone(),
                kappa0: k.kappa0,
                delta: k.delta,
                d0: k.spatial_dim,
            },
        };
        Ok(CompiledSde {
            model,
            drift,
            drift_jac,
            sigma,
            sigma_jac,
            atilde_cols,
            jump,
        })
    }

    fn dim(&self) -> usize {
        self.model.dim
    }

    fn eval_vec(exprs: &[Expr], args: &[f64]) -> Result<Vec<f64>> {
        exprs.iter().map(|e| e.eval(args)).collect()
    }

    fn eval_mat(exprs: &[Expr], d: usize, cols: usize, args: &[f64]) -> Result<Mat> {
        let mut m = Mat::zeros(d, cols);
        for i in 0..d {
            for j in 0..cols {
                m[(i, j)] = exprs[i * cols + j].eval(args)?;
            }
        }
        Ok(m)
    }

    /// A Aᵀ + Ã Ãᵀ at x.
    fn noise_gram(&self, x: &[f64]) -> Result<Mat> {
        let d = self.dim();
        let mut m = Mat::zeros(d, d);
        for col in &self.sigma {
            let v = Self::eval_vec(col, x)?;
            m = m.add(&Mat::outer(&v));
        }
        for col in &self.atilde_cols {
            let v = Self::eval_vec(col, x)?;
            m = m.add(&Mat::outer(&v));
        }
        Ok(m)
    }

    /// Ã(x) as a d×m matrix.
    fn atilde(&self, x: &[f64]) -> Result<Mat> {
        let d = self.dim();
        let m = self.atilde_cols.len();
        let mut out = Mat::zeros(d, m);
        for (k, col) in self.atilde_cols.iter().enumerate() {
            for i in 0..d {
                out[(i, k)] = col[i].eval(x)?;
            }
        }
        Ok(out)
    }

    /// Jump displacement and (optionally) I + ∇_x g at (x, z).
    fn jump_apply(
        &self,
        x: &[f64],
        event: &JumpEvent,
        want_flow: bool,
    ) -> Result<(Vec<f64>, Option<Mat>)> {
        let d = self.dim();
        match (&self.jump, event.channel) {
            (CompiledJump::None, _) => Ok((vec![0.0; d], want_flow.then(|| Mat::identity(d)))),
            (CompiledJump::Symbolic { g, gx }, _) => {
                let mut args = Vec::with_capacity(d + event.mark.len());
                args.extend_from_slice(x);
                args.extend_from_slice(&event.mark);
                let delta = Self::eval_vec(g, &args)?;
                let f = if want_flow {
                    let grad = Self::eval_mat(gx, d, d, &args)?;
                    Some(Mat::identity(d).add(&grad))
                } else {
                    None
                };
                Ok((delta, f))
            }
            (CompiledJump::Kinetic { transform, d0, .. }, JumpChannel::KineticSmall) => {
                let d0 = *d0;
                let phi = transform.map(x, &event.mark)?;
                let mut delta = vec![0.0; d];
                delta[d0..(d0 + phi.len())].copy_from_slice(&phi);
                let f = if want_flow {
                    // only the velocity rows of g are nonzero, but they depend
                    // on the whole state through κ; central differences
                    let mut m = Mat::identity(d);
                    for s in 0..d {
                        let h = 1e-5 * (1.0 + x[s].abs());
                        let mut xp = x.to_vec();
                        let mut xm = x.to_vec();
                        xp[s] += h;
                        xm[s] -= h;
                        let pp = transform.map(&xp, &event.mark)?;
                        let pm = transform.map(&xm, &event.mark)?;
                        for i in 0..d0 {
                            m[(d0 + i, s)] += (pp[i] - pm[i]) / (2.0 * h);
                        }
                    }
                    Some(m)
                } else {
                    None
                };
                Ok((delta, f))
            }
            (CompiledJump::Kinetic { d0, .. }, JumpChannel::KineticLarge) => {
                let d0 = *d0;
                let mut delta = vec![0.0; d];
                delta[d0..(d0 + event.mark.len())].copy_from_slice(&event.mark);
                Ok((delta, want_flow.then(|| Mat::identity(d))))
            }
            (CompiledJump::Kinetic { .. }, JumpChannel::Plain) => Err(Error::Unsupported(
                "plain jump event routed to a kinetic model".into(),
            )),
        }
    }

    /// Thinning acceptance probability for an event (1 for exact channels).
    fn acceptance(&self, x: &[f64], event: &JumpEvent, bound: Option<f64>) -> Result<f64> {
        match (&self.jump, event.channel) {
            (CompiledJump::Kinetic { kappa, kappa0, .. }, JumpChannel::KineticLarge) => {
                let mut args = Vec::with_capacity(x.len() + event.mark.len());
                args.extend_from_slice(x);
                args.extend_from_slice(&event.mark);
                Ok(kappa.eval(&args)? / bound.unwrap_or(*kappa0))
            }
            _ => Ok(1.0),
        }
    }

    fn sample_events(
        &self,
        scheme: &SimulationScheme,
        horizon: f64,
        rng: &mut RngStream,
    ) -> Result<Vec<JumpEvent>> {
        let alpha = self.model.alpha;
        let m = self.model.mark_dim;
        let mut events = match &self.jump {
            CompiledJump::None => Vec::new(),
            CompiledJump::Symbolic { .. } => sample_channel(
                alpha,
                scheme.eps,
                self.model.zmax,
                m,
                horizon,
                1.0,
                JumpChannel::Plain,
                rng,
            ),
            CompiledJump::Kinetic { kappa0, delta, .. } => {
                let bound = scheme.thinning_bound.unwrap_or(*kappa0);
                let mut ev = sample_channel(
                    alpha,
                    scheme.eps.min(*delta),
                    *delta,
                    m,
                    horizon,
                    1.0,
                    JumpChannel::KineticSmall,
                    rng,
                );
                ev.extend(sample_channel(
                    alpha,
                    *delta,
                    f64::INFINITY,
                    m,
                    horizon,
                    bound,
                    JumpChannel::KineticLarge,
                    rng,
                ));
                ev
            }
        };
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(events)
    }

    /// Compensator drift ∫ g(x, z) ν(dz) over eps ≤ |z| ≤ zmax; identically
    /// zero for odd g against the symmetric measure.
    fn compensator(&self, x: &[f64], scheme: &SimulationScheme) -> Result<Vec<f64>> {
        let d = self.dim();
        if self.model.odd_g {
            return Ok(vec![0.0; d]);
        }
        let CompiledJump::Symbolic { g, .. } = &self.jump else {
            return Ok(vec![0.0; d]);
        };
        let alpha = self.model.alpha;
        let m = self.model.mark_dim;
        if m > 3 {
            return Err(Error::Unsupported(
                "compensator quadrature supports mark dimension <= 3".into(),
            ));
        }
        let cfg = QuadConfig::with_rel_tol(1e-8);
        let mut out = vec![0.0; d];
        for (omega, w) in quad::sphere_grid(m, 24) {
            for (i, gi) in g.iter().enumerate() {
                let val = quad::integrate_radial(
                    |r| {
                        let mut args = Vec::with_capacity(d + m);
                        args.extend_from_slice(x);
                        args.extend(omega.iter().map(|o| o * r));
                        gi.eval(&args).unwrap_or(f64::NAN) * r.powf(-1.0 - alpha)
                    },
                    scheme.eps,
                    self.model.zmax,
                    cfg,
                )?;
                out[i] += w * val;
            }
        }
        Ok(out)
    }
}

// ---- the stepper -----------------------------------------------------------

struct Stepper<'a, 'm> {
    compiled: &'a CompiledSde<'m>,
    scheme: SimulationScheme,
    track_flow: bool,
    t: f64,
    x: Vec<f64>,
    j: Mat,
    k: Mat,
    sigma_hat: Mat,
    gauss_scale: f64,
}

impl<'a, 'm> Stepper<'a, 'm> {
    fn new(
        compiled: &'a CompiledSde<'m>,
        scheme: SimulationScheme,
        x0: &[f64],
        track_flow: bool,
    ) -> Result<Self> {
        let d = compiled.dim();
        if x0.len() != d {
            return Err(Error::DimMismatch(format!(
                "x0 has length {}, model dimension is {d}",
                x0.len()
            )));
        }
        let model = compiled.model;
        scheme.validate_against(model.zmax)?;
        // variance rate of one dropped-mark coordinate:
        // ∫_{|z|<eps} z_i² ν(dz) = S_{m−1} eps^(2−α) / (m (2−α))
        let m = model.mark_dim as f64;
        let c_eps = quad::sphere_surface(model.mark_dim) * scheme.eps.powf(2.0 - model.alpha)
            / (m * (2.0 - model.alpha));
        Ok(Stepper {
            compiled,
            scheme,
            track_flow,
            t: 0.0,
            x: x0.to_vec(),
            j: Mat::identity(d),
            k: Mat::identity(d),
            sigma_hat: Mat::zeros(d, d),
            gauss_scale: c_eps,
        })
    }

    fn check_finite(&self) -> Result<()> {
        let norm = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(Error::BlowUp { t: self.t, norm });
        }
        Ok(())
    }

    /// Drift/diffusion Euler step over [t, t + dt], no jump.
    fn euler_step(&mut self, dt: f64, rng: &mut RngStream) -> Result<()> {
        if dt <= 0.0 {
            return Ok(());
        }
        let d = self.compiled.dim();
        if self.track_flow {
            self.sigma_hat.add_assign_scaled(
                &self
                    .k
                    .matmul(&self.compiled.noise_gram(&self.x)?)
                    .matmul(&self.k.transpose()),
                dt,
            );
        }
        let b = CompiledSde::eval_vec(&self.compiled.drift, &self.x)?;
        let mut dx: Vec<f64> = b.iter().map(|v| v * dt).collect();
        let mut flow_inc = if self.track_flow {
            let mut f = CompiledSde::eval_mat(&self.compiled.drift_jac, d, d, &self.x)?.scale(dt);
            for i in 0..d {
                f[(i, i)] += 1.0;
            }
            Some(f)
        } else {
            None
        };
        let sqrt_dt = dt.sqrt();
        for (col, jac) in self.compiled.sigma.iter().zip(&self.compiled.sigma_jac) {
            let dw = rng.normal() * sqrt_dt;
            let s = CompiledSde::eval_vec(col, &self.x)?;
            for i in 0..d {
                dx[i] += s[i] * dw;
            }
            if let Some(f) = &mut flow_inc {
                let grad = CompiledSde::eval_mat(jac, d, d, &self.x)?;
                f.add_assign_scaled(&grad, dw);
            }
        }
        if self.scheme.small_jump_mode == SmallJumpMode::Gaussian && self.compiled.model.has_jumps()
        {
            let at = self.compiled.atilde(&self.x)?;
            let scale = (self.gauss_scale * dt).sqrt();
            let xi: Vec<f64> = (0..self.compiled.model.mark_dim)
                .map(|_| rng.normal() * scale)
                .collect();
            let inc = at.matvec(&xi);
            for i in 0..d {
                dx[i] += inc[i];
            }
        }
        if !self.compiled.model.odd_g {
            let comp = self.compiled.compensator(&self.x, &self.scheme)?;
            for i in 0..d {
                dx[i] -= comp[i] * dt;
            }
        }
        for i in 0..d {
            self.x[i] += dx[i];
        }
        if let Some(f) = flow_inc {
            self.j = f.matmul(&self.j);
            let finv = f
                .inverse()
                .map_err(|_| Error::SingularJumpMap(format!("flow factor at t = {:.6}", self.t)))?;
            self.k = self.k.matmul(&finv);
        }
        self.t += dt;
        self.check_finite()
    }

    /// Apply one jump event; returns the record when the event is accepted.
    fn apply_jump(&mut self, event: &JumpEvent, rng: &mut RngStream) -> Result<Option<JumpRecord>> {
        let p = self
            .compiled
            .acceptance(&self.x, event, self.scheme.thinning_bound)?;
        let accepted = p >= 1.0 || rng.uniform() < p;
        if !accepted {
            return Ok(None);
        }
        let k_before = self.track_flow.then(|| self.k.clone());
        let (delta, flow) = self.compiled.jump_apply(&self.x, event, self.track_flow)?;
        for i in 0..self.x.len() {
            self.x[i] += delta[i];
        }
        if let Some(f) = flow {
            if f.det() <= 0.0 {
                return Err(Error::SingularJumpMap(format!(
                    "t = {:.6}, mark {:?}",
                    event.t, event.mark
                )));
            }
            self.j = f.matmul(&self.j);
            let finv = f.inverse().map_err(|_| {
                Error::SingularJumpMap(format!("t = {:.6}, mark {:?}", event.t, event.mark))
            })?;
            self.k = self.k.matmul(&finv);
        }
        self.check_finite()?;
        let mark_norm: f64 = event.mark.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Some(JumpRecord {
            t: event.t,
            mark: event.mark.clone(),
            accepted: true,
            small: mark_norm < self.scheme.delta,
            k_before,
        }))
    }
}

/// Drives a stepper through the merged grid of uniform steps and jump times.
fn run_path(
    compiled: &CompiledSde<'_>,
    scheme: &SimulationScheme,
    x0: &[f64],
    horizon: f64,
    rng: &mut RngStream,
    track_flow: bool,
    mut observe: impl FnMut(&Stepper<'_, '_>),
) -> Result<Vec<JumpRecord>> {
    let events = compiled.sample_events(scheme, horizon, rng)?;
    let mut stepper = Stepper::new(compiled, *scheme, x0, track_flow)?;
    observe(&stepper);
    let mut jumps = Vec::new();
    let mut next_event = 0usize;
    let mut grid_index = 0usize;
    loop {
        let t_grid = ((grid_index + 1) as f64 * scheme.h).min(horizon);
        let pending = events.get(next_event).filter(|e| e.t <= t_grid);
        match pending {
            Some(event) => {
                let event = event.clone();
                stepper.euler_step(event.t - stepper.t, rng)?;
                if let Some(rec) = stepper.apply_jump(&event, rng)? {
                    jumps.push(rec);
                }
                stepper.t = event.t;
                observe(&stepper);
                next_event += 1;
            }
            None => {
                stepper.euler_step(t_grid - stepper.t, rng)?;
                stepper.t = t_grid;
                observe(&stepper);
                grid_index += 1;
                if t_grid >= horizon {
                    break;
                }
            }
        }
    }
    Ok(jumps)
}

/// Simulate one path with full history: states, flows, Σ̂ snapshots, jump log.
pub fn simulate_path(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    horizon: f64,
    rng: &mut RngStream,
) -> Result<PathSample> {
    let compiled = CompiledSde::new(model)?;
    simulate_path_compiled(&compiled, scheme, x0, horizon, rng)
}

pub fn simulate_path_compiled(
    compiled: &CompiledSde<'_>,
    scheme: &SimulationScheme,
    x0: &[f64],
    horizon: f64,
    rng: &mut RngStream,
) -> Result<PathSample> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut jacobians = Vec::new();
    let mut inverses = Vec::new();
    let mut sigma_hats = Vec::new();
    let jumps = run_path(compiled, scheme, x0, horizon, rng, true, |s| {
        times.push(s.t);
        states.push(s.x.clone());
        jacobians.push(s.j.clone());
        inverses.push(s.k.clone());
        sigma_hats.push(s.sigma_hat.clone());
    })?;
    Ok(PathSample {
        times,
        states,
        jacobians,
        inverses,
        sigma_hats,
        jumps,
    })
}

/// Terminal state of one path started at `x0` over `horizon`, without flow
/// tracking. Used by nested estimators that fan sub-paths out of an outer
/// ensemble with their own streams.
pub fn run_subpath_terminal(
    compiled: &CompiledSde<'_>,
    scheme: &SimulationScheme,
    x0: &[f64],
    horizon: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut last = x0.to_vec();
    run_path(compiled, scheme, x0, horizon, rng, false, |s| {
        last.clone_from(&s.x);
    })?;
    Ok(last)
}

/// Per-path terminal output of an ensemble.
#[derive(Debug, Clone)]
pub struct PathTerminal {
    pub state: Vec<f64>,
    pub sigma_hat: Option<Mat>,
    pub det_j: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnsembleOptions {
    pub sigma_hat: bool,
    pub det_j: bool,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub dim: usize,
    /// Indexed by path; None marks a path aborted by the blow-up guard.
    pub paths: Vec<Option<PathTerminal>>,
    pub failures: usize,
}

impl EnsembleResult {
    pub fn successes(&self) -> impl Iterator<Item = &PathTerminal> {
        self.paths.iter().flatten()
    }

    pub fn terminal_states(&self) -> Vec<&[f64]> {
        self.successes().map(|p| p.state.as_slice()).collect()
    }

    /// Monte Carlo mean and standard error of φ over terminal states.
    pub fn mean_of(&self, phi: impl Fn(&[f64]) -> f64) -> (f64, f64) {
        let mut n = 0usize;
        let (mut s1, mut s2) = (0.0, 0.0);
        for p in self.successes() {
            let v = phi(&p.state);
            s1 += v;
            s2 += v * v;
            n += 1;
        }
        let nf = n as f64;
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0);
        (mean, (var / nf).sqrt())
    }

    /// Sample covariance of the terminal states.
    pub fn covariance(&self) -> Mat {
        let states = self.terminal_states();
        let n = states.len();
        let d = self.dim;
        let mut mean = vec![0.0; d];
        for s in &states {
            for i in 0..d {
                mean[i] += s[i] / n as f64;
            }
        }
        let mut cov = Mat::zeros(d, d);
        for s in &states {
            let c: Vec<f64> = (0..d).map(|i| s[i] - mean[i]).collect();
            cov = cov.add(&Mat::outer(&c));
        }
        cov.scale(1.0 / (n as f64 - 1.0))
    }
}

/// N independent paths; path i uses RNG stream (scheme.seed, i). Output order
/// is path order, independent of worker scheduling.
pub fn simulate_ensemble(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    horizon: f64,
    n: usize,
    opts: EnsembleOptions,
) -> Result<EnsembleResult> {
    let compiled = CompiledSde::new(model)?;
    let track = opts.sigma_hat || opts.det_j;
    let paths: Vec<Result<Option<PathTerminal>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(scheme.seed, i as u64);
            let mut last: Option<(Vec<f64>, Mat, Mat)> = None;
            let run = run_path(&compiled, scheme, x0, horizon, &mut rng, track, |s| {
                last = Some((s.x.clone(), s.sigma_hat.clone(), s.j.clone()));
            });
            match run {
                Ok(_) => {
                    let (state, sigma, j) = last.unwrap();
                    Ok(Some(PathTerminal {
                        state,
                        sigma_hat: opts.sigma_hat.then_some(sigma),
                        det_j: opts.det_j.then(|| j.det()),
                    }))
                }
                Err(Error::BlowUp { .. }) => Ok(None),
                Err(other) => Err(other),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(n);
    let mut failures = 0usize;
    for p in paths {
        let p = p?;
        if p.is_none() {
            failures += 1;
        }
        out.push(p);
    }
    Ok(EnsembleResult {
        dim: model.dim,
        paths: out,
        failures,
    })
}

/// Slope classification of the excursion-tail fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum SlopeFit {
    /// Least-squares slope of log p against log ε over nonzero estimates.
    Fitted(f64),
    /// Every estimate was zero: decay faster than any resolvable polynomial.
    NoExceedances,
    /// Fewer than two nonzero estimates; no slope can be fitted.
    TooFewPoints,
}

impl SlopeFit {
    /// Slope value with NoExceedances read as +∞.
    pub fn value(self) -> Option<f64> {
        match self {
            SlopeFit::Fitted(s) => Some(s),
            SlopeFit::NoExceedances => Some(f64::INFINITY),
            SlopeFit::TooFewPoints => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExcursionReport {
    pub threshold: f64,
    pub horizons: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub counts: Vec<usize>,
    pub paths: usize,
    pub failures: usize,
    pub slope: SlopeFit,
}

/// P(sup_{s ≤ ε} |X_s| ≥ threshold) for each ε, one simulation pass over
/// [0, max ε] per path with running-sup checkpoints, plus the log-log slope.
pub fn excursion_probability(
    model: &SdeModel,
    scheme: &SimulationScheme,
    x0: &[f64],
    threshold: f64,
    horizons: &[f64],
    n: usize,
) -> Result<ExcursionReport> {
    if horizons.is_empty() || horizons.iter().any(|e| *e <= 0.0) {
        return Err(Error::config("horizons must be positive"));
    }
    let mut sorted = horizons.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let t_max = *sorted.last().unwrap();
    let compiled = CompiledSde::new(model)?;
    let per_path: Vec<Result<Option<Vec<bool>>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(scheme.seed, i as u64);
            let mut sup = 0.0f64;
            let mut hit = vec![false; sorted.len()];
            let run = run_path(&compiled, scheme, x0, t_max, &mut rng, false, |s| {
                let norm = s.x.iter().map(|v| v * v).sum::<f64>().sqrt();
                sup = sup.max(norm);
                for (k, &eps) in sorted.iter().enumerate() {
                    if s.t <= eps + 1e-12 && sup >= threshold {
                        hit[k] = true;
                    }
                }
            });
            match run {
                Ok(_) => Ok(Some(hit)),
                // a path that blows up certainly exceeded the threshold
                Err(Error::BlowUp { t, .. }) => {
                    let mut hit = vec![false; sorted.len()];
                    for (k, &eps) in sorted.iter().enumerate() {
                        if t <= eps {
                            hit[k] = true;
                        }
                    }
                    Ok(Some(hit))
                }
                Err(other) => Err(other),
            }
        })
        .collect();
    let mut counts = vec![0usize; sorted.len()];
    let mut failures = 0usize;
    for p in per_path {
        match p? {
            Some(hit) => {
                for (c, h) in counts.iter_mut().zip(&hit) {
                    if *h {
                        *c += 1;
                    }
                }
            }
            None => failures += 1,
        }
    }
    let nf = n as f64;
    let estimates: Vec<f64> = counts.iter().map(|c| *c as f64 / nf).collect();
    let stderrs: Vec<f64> = estimates
        .iter()
        .map(|p| (p * (1.0 - p) / nf).sqrt())
        .collect();
    let slope = fit_loglog_slope(&sorted, &estimates);
    Ok(ExcursionReport {
        threshold,
        horizons: sorted,
        estimates,
        stderrs,
        counts,
        paths: n,
        failures,
        slope,
    })
}

fn fit_loglog_slope(eps: &[f64], p: &[f64]) -> SlopeFit {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(p)
        .filter(|(_, p)| **p > 0.0)
        .map(|(e, p)| (e.ln(), p.ln()))
        .collect();
    if pts.is_empty() {
        return SlopeFit::NoExceedances;
    }
    if pts.len() < 2 {
        return SlopeFit::TooFewPoints;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    SlopeFit::Fitted((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, ModelSource, SdeModel};

    fn example(name: &str) -> SdeModel {
        match builtin(name).unwrap() {
            ModelSource::Sde(m) => m,
            ModelSource::Kinetic(k) => k.to_sde().unwrap(),
        }
    }

    #[test]
    fn jump_rate_closed_form() {
        // d = 1, α = 1, eps = 0.1, zmax = 1: 2 (10 − 1)/1 = 18
        assert!((jump_rate(1.0, 0.1, 1.0, 1) - 18.0).abs() < 1e-12);
        // radius inverse CDF endpoints
        assert!((sample_radius(1.0, 0.1, 1.0, 0.0) - 0.1).abs() < 1e-12);
        assert!((sample_radius(1.0, 0.1, 1.0, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn jump_count_matches_poisson_mean() {
        let mut rng = RngStream::new(3, 0);
        let lambda = jump_rate(1.0, 0.1, 1.0, 1);
        let horizon = 10.0;
        let n = 1000;
        let mut total = 0usize;
        for _ in 0..n {
            total += sample_jumps(1.0, 0.1, 1.0, 1, horizon, &mut rng)
                .unwrap()
                .len();
        }
        let mean = total as f64 / n as f64;
        let expect = lambda * horizon;
        assert!(
            (mean - expect).abs() < 3.0 * (expect / n as f64).sqrt(),
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn jump_times_increase_and_marks_in_band() {
        let mut rng = RngStream::new(9, 1);
        let ev = sample_jumps(0.7, 0.05, 1.0, 2, 5.0, &mut rng).unwrap();
        assert!(!ev.is_empty());
        for w in ev.windows(2) {
            assert!(w[0].t < w[1].t);
        }
        for e in &ev {
            let r: f64 = e.mark.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((0.05..=1.0 + 1e-12).contains(&r));
        }
    }

    #[test]
    fn frozen_model_stays_put() {
        let m = SdeModel::builder(2).build().unwrap();
        let scheme = SimulationScheme::default_for(&m, 1);
        let mut rng = RngStream::new(1, 0);
        let path = simulate_path(&m, &scheme, &[0.4, -0.2], 1.0, &mut rng).unwrap();
        assert_eq!(path.terminal(), &[0.4, -0.2]);
        assert!(path.flow_defect() < 1e-15);
        assert!(path.sigma_hat().max_abs() < 1e-15);
        assert!(path.jumps.is_empty());
    }

    #[test]
    fn pure_drift_flow_is_exponential() {
        // b = −x: X_T = x0 e^(−T), J_T = e^(−T)
        let m = SdeModel::builder(1).drift("-x1").unwrap().build().unwrap();
        let scheme = SimulationScheme::default_for(&m, 2);
        let mut rng = RngStream::new(2, 0);
        let path = simulate_path(&m, &scheme, &[1.5], 1.0, &mut rng).unwrap();
        let exact = 1.5 * (-1.0f64).exp();
        assert!((path.terminal()[0] - exact).abs() < 2e-3 * exact.abs());
        assert!(path.flow_defect() < 1e-10);
    }

    #[test]
    fn brownian_identity_sigma_hat_is_t() {
        // σ = I (d = 2), b = g = 0: Σ̂_t = t·I exactly
        let m = SdeModel::builder(2)
            .sigma_column("1, 0")
            .unwrap()
            .sigma_column("0, 1")
            .unwrap()
            .build()
            .unwrap();
        let scheme = SimulationScheme::default_for(&m, 3);
        let mut rng = RngStream::new(3, 0);
        let path = simulate_path(&m, &scheme, &[0.0, 0.0], 0.5, &mut rng).unwrap();
        let sh = path.sigma_hat();
        assert!((sh[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((sh[(1, 1)] - 0.5).abs() < 1e-9);
        assert!(sh[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_jacobian_is_rotation() {
        let m = example("example4");
        let scheme = SimulationScheme::default_for(&m, 4);
        let mut rng = RngStream::new(4, 0);
        let path = simulate_path(&m, &scheme, &[0.3, -0.1], 1.0, &mut rng).unwrap();
        // J_t ≈ exp(tM), M = [[0,1],[−1,0]] (Euler error O(h·t))
        let j = path.jacobians.last().unwrap();
        let (c, s) = (1.0f64.cos(), 1.0f64.sin());
        let exact = Mat::from_rows(&[vec![c, s], vec![-s, c]]);
        assert!(
            j.sub(&exact).max_abs() < 2e-3,
            "J error {}",
            j.sub(&exact).max_abs()
        );
        assert!(path.flow_defect() < 1e-8);
    }

    #[test]
    fn flow_defect_small_on_jump_models() {
        for name in ["example1", "example2", "example3"] {
            let m = example(name);
            let scheme = SimulationScheme::default_for(&m, 5);
            let mut rng = RngStream::new(5, 0);
            let path = simulate_path(&m, &scheme, &vec![0.1; m.dim], 1.0, &mut rng).unwrap();
            assert!(path.flow_defect() < 1e-8, "{name}: {}", path.flow_defect());
            assert!(!path.jumps.is_empty(), "{name} should jump");
        }
    }

    #[test]
    fn sigma_hat_snapshots_are_monotone_psd() {
        let m = example("example2");
        let scheme = SimulationScheme::default_for(&m, 6);
        let mut rng = RngStream::new(6, 0);
        let path = simulate_path(&m, &scheme, &[0.2, 0.0], 0.5, &mut rng).unwrap();
        let step = (path.sigma_hats.len() / 7).max(1);
        for w in path.sigma_hats.windows(step + 1).step_by(step) {
            let diff = w.last().unwrap().sub(&w[0]);
            assert!(diff.is_psd(1e-10));
        }
        assert!(path.sigma_hat().is_psd(1e-10));
    }

    #[test]
    fn ensemble_is_deterministic_and_order_stable() {
        let m = example("example1");
        let scheme = SimulationScheme::default_for(&m, 7);
        let opts = EnsembleOptions {
            sigma_hat: true,
            det_j: false,
        };
        let a = simulate_ensemble(&m, &scheme, &[0.0], 0.5, 64, opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| simulate_ensemble(&m, &scheme, &[0.0], 0.5, 64, opts).unwrap());
        for (pa, pb) in a.paths.iter().zip(&b.paths) {
            let (pa, pb) = (pa.as_ref().unwrap(), pb.as_ref().unwrap());
            assert_eq!(pa.state, pb.state);
            assert_eq!(
                pa.sigma_hat.as_ref().unwrap().data(),
                pb.sigma_hat.as_ref().unwrap().data()
            );
        }
    }

    #[test]
    fn single_path_reproducibility() {
        let m = example("example3");
        let scheme = SimulationScheme::default_for(&m, 8);
        let a = simulate_ensemble(&m, &scheme, &[0.1, 0.1], 1.0, 1, EnsembleOptions::default())
            .unwrap();
        let b = simulate_ensemble(&m, &scheme, &[0.1, 0.1], 1.0, 1, EnsembleOptions::default())
            .unwrap();
        assert_eq!(
            a.paths[0].as_ref().unwrap().state,
            b.paths[0].as_ref().unwrap().state
        );
    }

    #[test]
    fn deterministic_mean_decay() {
        // b = −x, σ = g = 0: E X_T = x0 e^(−T) with no randomness
        let m = SdeModel::builder(1).drift("-x1").unwrap().build().unwrap();
        let mut scheme = SimulationScheme::default_for(&m, 9);
        scheme.h = 1e-4;
        let res =
            simulate_ensemble(&m, &scheme, &[2.0], 1.0, 16, EnsembleOptions::default()).unwrap();
        let (mean, _) = res.mean_of(|x| x[0]);
        assert!((mean - 2.0 * (-1.0f64).exp()).abs() < 1e-4 * 2.0);
    }

    #[test]
    fn dropped_small_jump_variance_bound() {
        // additive g = z, d = 1: Var(X_T) with eps and eps/2 differ by at most
        // 2 T (2/(2−α)) eps^(2−α)
        let m = SdeModel::builder(1)
            .jump_g("z1")
            .unwrap()
            .alpha(1.0)
            .build()
            .unwrap();
        let horizon = 1.0;
        let n = 40_000;
        let mut var = Vec::new();
        for eps in [0.2, 0.1] {
            let scheme = SimulationScheme {
                h: 0.01,
                eps,
                delta: 0.5,
                small_jump_mode: SmallJumpMode::Drop,
                seed: 10,
                thinning_bound: None,
            };
            let res =
                simulate_ensemble(&m, &scheme, &[0.0], horizon, n, EnsembleOptions::default())
                    .unwrap();
            let (mean, _) = res.mean_of(|x| x[0]);
            let (m2, _) = res.mean_of(|x| (x[0] - mean) * (x[0] - mean));
            var.push(m2);
        }
        let bound = 2.0 * horizon * 2.0 / (2.0 - 1.0) * 0.2f64.powf(2.0 - 1.0);
        assert!(
            (var[0] - var[1]).abs() <= bound,
            "vars {var:?}, bound {bound}"
        );
        // and both are near the analytic truncated variance 2(1 − eps)
        let exact = 2.0 * (1.0 - 0.2);
        assert!(
            (var[0] - exact).abs() < 0.1 * exact,
            "{} vs {exact}",
            var[0]
        );
    }

    #[test]
    fn gaussian_substitute_restores_variance() {
        let m = SdeModel::builder(1)
            .jump_g("z1")
            .unwrap()
            .alpha(1.0)
            .build()
            .unwrap();
        let scheme = SimulationScheme {
            h: 0.005,
            eps: 0.3,
            delta: 0.5,
            small_jump_mode: SmallJumpMode::Gaussian,
            seed: 11,
            thinning_bound: None,
        };
        let n = 40_000;
        let res =
            simulate_ensemble(&m, &scheme, &[0.0], 1.0, n, EnsembleOptions::default()).unwrap();
        let (mean, _) = res.mean_of(|x| x[0]);
        let (var, _) = res.mean_of(|x| (x[0] - mean) * (x[0] - mean));
        // full variance: ∫_{|z|≤1} z² ν = 2/(2−α) = 2
        let exact = 2.0;
        assert!((var - exact).abs() < 0.1 * exact, "var {var} vs {exact}");
    }

    #[test]
    fn excursion_zero_for_frozen_model() {
        let m = SdeModel::builder(1).build().unwrap();
        let scheme = SimulationScheme::default_for(&m, 12);
        let rep = excursion_probability(&m, &scheme, &[0.0], 1.0, &[0.2, 0.1, 0.05], 200).unwrap();
        assert!(rep.estimates.iter().all(|p| *p == 0.0));
        assert_eq!(rep.slope, SlopeFit::NoExceedances);
        assert_eq!(rep.slope.value(), Some(f64::INFINITY));
    }

    #[test]
    fn excursion_monotone_and_two_jump_slope() {
        // additive jumps, threshold above zmax: the event needs at least two
        // jumps, so the slope over shrinking horizons is about 2 or steeper
        let m = SdeModel::builder(1)
            .jump_g("z1")
            .unwrap()
            .alpha(1.0)
            .build()
            .unwrap();
        let scheme = SimulationScheme {
            h: 0.01,
            eps: 0.05,
            delta: 0.5,
            small_jump_mode: SmallJumpMode::Drop,
            seed: 13,
            thinning_bound: None,
        };
        let rep =
            excursion_probability(&m, &scheme, &[0.0], 1.2, &[0.4, 0.2, 0.1], 60_000).unwrap();
        // monotone nonincreasing as ε decreases (report is sorted ascending)
        for w in rep.estimates.windows(2) {
            assert!(w[0] <= w[1] + 2.0 * (rep.stderrs[0] + rep.stderrs[1]));
        }
        match rep.slope {
            SlopeFit::Fitted(s) => assert!(s >= 1.6, "slope {s}"),
            other => panic!("expected a fitted slope, got {other:?}"),
        }
    }

    #[test]
    fn weak_order_sanity_under_step_halving() {
        // halving h from 1e-2 to 1e-3 moves E φ(X_T) by less than the Monte
        // Carlo standard error at N = 1e4 (shared seed couples the jumps)
        let m = example("example1");
        let mut means = Vec::new();
        let mut ses = Vec::new();
        for h in [1e-2, 1e-3] {
            let scheme = SimulationScheme {
                h,
                eps: 0.01,
                delta: 0.1,
                small_jump_mode: SmallJumpMode::Drop,
                seed: 77,
                thinning_bound: None,
            };
            let res =
                simulate_ensemble(&m, &scheme, &[0.0], 1.0, 10_000, EnsembleOptions::default())
                    .unwrap();
            let (mean, se) = res.mean_of(|x| x[0].cos());
            means.push(mean);
            ses.push(se);
        }
        assert!(
            (means[0] - means[1]).abs() < ses[1],
            "means {means:?}, se {ses:?}"
        );
    }

    #[test]
    fn blowup_guard_counts_failures() {
        // dx = x³ dt explodes in finite time from a large start
        let m = SdeModel::builder(1).drift("x1^3").unwrap().build().unwrap();
        let scheme = SimulationScheme::default_for(&m, 14);
        let res =
            simulate_ensemble(&m, &scheme, &[40.0], 3.0, 4, EnsembleOptions::default()).unwrap();
        assert_eq!(res.failures, 4);
        assert_eq!(res.terminal_states().len(), 0);
    }

    #[test]
    fn kinetic_path_runs_and_flows_stay_consistent() {
        let m = example("kinetic");
        let mut scheme = SimulationScheme::default_for(&m, 15);
        scheme.h = 5e-3;
        scheme.eps = 0.02;
        scheme.delta = 0.1;
        let mut rng = RngStream::new(15, 0);
        let path = simulate_path(&m, &scheme, &[0.0, 0.0], 0.5, &mut rng).unwrap();
        assert!(path.flow_defect() < 1e-7, "defect {}", path.flow_defect());
        assert!(!path.jumps.is_empty());
        // some proposals from the thinned channel land above delta
        let large = path.jumps.iter().filter(|j| !j.small).count();
        assert!(large > 0, "expected accepted large jumps");
    }

    #[test]
    fn scheme_validation() {
        assert!(SimulationScheme::new(0.0, 0.1, 0.2, 0).is_err());
        assert!(SimulationScheme::new(0.1, 0.3, 0.2, 0).is_err());
        let m = example("example1");
        let s = SimulationScheme {
            h: 0.1,
            eps: 0.5,
            delta: 2.0, // above zmax = 1
            small_jump_mode: SmallJumpMode::Drop,
            seed: 0,
            thinning_bound: None,
        };
        assert!(s.validate_against(m.zmax).is_err());
    }
}
