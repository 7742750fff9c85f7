//! Vector fields as tuples of symbolic expressions, Lie brackets, the bracket
//! hierarchy and the uniform spanning check.
//!
//! The spanning defect at a point is the smallest eigenvalue of the Gram
//! matrix Σ V(x)V(x)ᵀ over all fields collected in the hierarchy; a positive
//! infimum over a box certifies the bracket condition there.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{self, Expr, VarSet};
use crate::linalg::Mat;

/// A d-dimensional field whose components are expressions in `x1..xd`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    dim: usize,
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(dim: usize, components: Vec<Expr>) -> Result<VectorField> {
        if components.len() != dim {
            return Err(Error::Arity {
                expected: dim,
                found: components.len(),
            });
        }
        for c in &components {
            if let Some(max) = c.max_var() {
                if max >= dim {
                    return Err(Error::DimMismatch(format!(
                        "component uses x{} but the field has dimension {dim}",
                        max + 1
                    )));
                }
            }
        }
        Ok(VectorField { dim, components })
    }

    pub fn zero(dim: usize) -> VectorField {
        VectorField {
            dim,
            components: vec![Expr::zero(); dim],
        }
    }

    /// Parse `dim` comma-separated component expressions in `x1..x<dim>`.
    pub fn parse(source: &str, dim: usize) -> Result<VectorField> {
        let vars = VarSet::states(dim);
        let list = expr::parse_list(source, &vars)?;
        VectorField::new(dim, list)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expr {
        &self.components[i]
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "point has length {}, field dimension is {}",
                x.len(),
                self.dim
            )));
        }
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn simplify(&self) -> VectorField {
        VectorField {
            dim: self.dim,
            components: self.components.iter().map(Expr::simplify).collect(),
        }
    }

    /// Identically zero after simplification (structural check only).
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.simplify().is_zero())
    }

    /// ∂_j of component i, as expressions (row i, column j).
    pub fn jacobian_exprs(&self) -> Vec<Vec<Expr>> {
        self.components
            .iter()
            .map(|c| (0..self.dim).map(|j| c.diff(j)).collect())
            .collect()
    }

    /// Directional derivative (V·∇)f of a scalar expression.
    pub fn apply_to(&self, f: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (j, vj) in self.components.iter().enumerate() {
            out = Expr::add(out, Expr::mul(vj.clone(), f.diff(j)));
        }
        out.simplify()
    }

    pub fn to_grammar_string(&self) -> String {
        let vars = VarSet::states(self.dim);
        self.components
            .iter()
            .map(|c| c.to_grammar_string(&vars))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl std::fmt::Display for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.to_grammar_string())
    }
}

/// Lie bracket in coordinates: [V, W]^i = V^j ∂_j W^i − W^j ∂_j V^i.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField> {
    if v.dim != w.dim {
        return Err(Error::DimMismatch(format!(
            "bracket of fields with dimensions {} and {}",
            v.dim, w.dim
        )));
    }
    let d = v.dim;
    let mut components = Vec::with_capacity(d);
    for i in 0..d {
        let mut c = Expr::zero();
        for j in 0..d {
            c = Expr::add(
                c,
                Expr::sub(
                    Expr::mul(v.components[j].clone(), w.components[i].diff(j)),
                    Expr::mul(w.components[j].clone(), v.components[i].diff(j)),
                ),
            );
        }
        components.push(c.simplify());
    }
    VectorField::new(d, components)
}

/// Bracket levels: level 0 holds the diffusion and jump fields, level j is
/// generated from level j−1 by bracketing with A_k, Ã_k and A₀.
#[derive(Debug, Clone)]
pub struct BracketHierarchy {
    pub levels: Vec<Vec<VectorField>>,
    pub j0: usize,
    pub dedup: bool,
    pub pruned_zero: usize,
}

impl BracketHierarchy {
    /// Build levels 0..j0 from the drift field `a0`, diffusion fields `a` and
    /// jump fields `a_tilde`. Identically-zero fields are pruned and counted;
    /// with `dedup` set, structurally identical fields within a level are
    /// removed (sign flips are kept — they only rescale the Gram matrix).
    pub fn build(
        a0: &VectorField,
        a: &[VectorField],
        a_tilde: &[VectorField],
        j0: usize,
        dedup: bool,
    ) -> Result<BracketHierarchy> {
        let mut pruned_zero = 0usize;
        let mut keep = |fields: Vec<VectorField>| -> Vec<VectorField> {
            let mut out: Vec<VectorField> = Vec::new();
            for f in fields {
                let f = f.simplify();
                if f.is_zero() {
                    pruned_zero += 1;
                    continue;
                }
                if dedup && out.contains(&f) {
                    continue;
                }
                out.push(f);
            }
            out
        };

        let mut level0: Vec<VectorField> = Vec::new();
        level0.extend(a.iter().cloned());
        level0.extend(a_tilde.iter().cloned());
        let mut levels = vec![keep(level0)];

        for _ in 1..=j0 {
            let prev = levels.last().unwrap();
            let mut next = Vec::new();
            for v in prev {
                for field in a.iter().chain(a_tilde.iter()) {
                    next.push(lie_bracket(field, v)?);
                }
                next.push(lie_bracket(a0, v)?);
            }
            levels.push(keep(next));
        }
        Ok(BracketHierarchy {
            levels,
            j0,
            dedup,
            pruned_zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .next()
            .map_or(0, VectorField::dim)
    }

    pub fn field_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &VectorField> {
        self.levels.iter().flatten()
    }

    /// Gram matrix Σ V(x)V(x)ᵀ over every field in the hierarchy.
    pub fn gram(&self, x: &[f64]) -> Result<Mat> {
        let d = x.len();
        let mut g = Mat::zeros(d, d);
        for field in self.all_fields() {
            let v = field.eval(x)?;
            g = g.add(&Mat::outer(&v));
        }
        Ok(g)
    }

    /// Spanning defect λ_min(Σ V(x)V(x)ᵀ) ≥ 0.
    pub fn defect(&self, x: &[f64]) -> Result<f64> {
        if self.field_count() == 0 {
            return Ok(0.0);
        }
        Ok(self.gram(x)?.min_sym_eigenvalue().max(0.0))
    }
}

/// Axis-aligned box over which the uniform condition is sampled.
#[derive(Debug, Clone, Serialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<DomainBox> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::config("box bounds must have equal, nonzero length"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::config("box lower bounds must be below upper bounds"));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> DomainBox {
        DomainBox::new(vec![lo; dim], vec![hi; dim]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn point(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }

    fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        if d > 16 {
            return Vec::new();
        }
        (0..(1usize << d))
            .map(|mask| {
                (0..d)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            self.hi[i]
                        } else {
                            self.lo[i]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Result of the uniform spanning check over a sampled box.
#[derive(Debug, Clone, Serialize)]
pub struct HormanderReport {
    pub domain: DomainBox,
    pub sample_count: usize,
    pub j0: usize,
    /// Smallest defect seen (after local polish from the best samples).
    pub infimum: f64,
    pub argmin: Vec<f64>,
    pub c0: f64,
    pub pass: bool,
    /// Points where the defect could not be evaluated (domain errors).
    pub failed_points: usize,
    pub first_failure: Option<String>,
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(base: usize, mut i: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

fn halton_point(dim: usize, index: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| radical_inverse(PRIMES[k], index))
        .collect()
}

/// Derivative-free local minimization (Nelder–Mead, box-clamped) used to
/// sharpen the sampled infimum; a quasi-uniform sample alone cannot resolve
/// minima to the reported precision.
fn polish_minimum(
    f: &dyn Fn(&[f64]) -> Option<f64>,
    start: &[f64],
    boxd: &DomainBox,
) -> Option<(Vec<f64>, f64)> {
    let d = start.len();
    let scale: Vec<f64> = boxd
        .lo
        .iter()
        .zip(&boxd.hi)
        .map(|(lo, hi)| 0.02 * (hi - lo))
        .collect();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(start.to_vec());
    for i in 0..d {
        let mut v = start.to_vec();
        v[i] += scale[i];
        boxd.clamp(&mut v);
        simplex.push(v);
    }
    let eval = |x: &mut Vec<f64>| -> Option<f64> {
        boxd.clamp(x);
        f(x)
    };
    let mut vals: Vec<f64> = Vec::with_capacity(d + 1);
    for p in &mut simplex {
        vals.push(eval(p)?);
    }
    for _ in 0..400 {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let worst = order[d];
        if (vals[worst] - vals[best]).abs() <= 1e-14 * (1.0 + vals[best].abs()) {
            break;
        }
        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / d as f64;
            }
        }
        let dir: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| c - w)
            .collect();
        let mut reflected: Vec<f64> = centroid.iter().zip(&dir).map(|(c, d)| c + d).collect();
        let fr = eval(&mut reflected);
        match fr {
            Some(fr) if fr < vals[best] => {
                let mut expanded: Vec<f64> = centroid
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + 2.0 * d)
                    .collect();
                if let Some(fe) = eval(&mut expanded) {
                    if fe < fr {
                        simplex[worst] = expanded;
                        vals[worst] = fe;
                        continue;
                    }
                }
                simplex[worst] = reflected;
                vals[worst] = fr;
            }
            Some(fr) if fr < vals[order[d - 1]] => {
                simplex[worst] = reflected;
                vals[worst] = fr;
            }
            _ => {
                let mut contracted: Vec<f64> = centroid
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c - 0.5 * d)
                    .collect();
                match eval(&mut contracted) {
                    Some(fc) if fc < vals[worst] => {
                        simplex[worst] = contracted;
                        vals[worst] = fc;
                    }
                    _ => {
                        // shrink toward the best vertex
                        let anchor = simplex[best].clone();
                        for (i, p) in simplex.iter_mut().enumerate() {
                            if i == best {
                                continue;
                            }
                            for (v, a) in p.iter_mut().zip(&anchor) {
                                *v = a + 0.5 * (*v - a);
                            }
                            vals[i] = eval(p)?;
                        }
                    }
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=d {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    Some((simplex[best].clone(), vals[best]))
}

/// Evaluate the defect on a Halton sample of the box plus its corners, polish
/// the best candidates locally, and compare the infimum against `c0`.
/// `seed` offsets the deterministic Halton sequence.
pub fn uniform_check(
    hierarchy: &BracketHierarchy,
    domain: &DomainBox,
    samples: usize,
    c0: f64,
    seed: u64,
) -> Result<HormanderReport> {
    if samples == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    if domain.dim() > PRIMES.len() {
        return Err(Error::config(format!(
            "uniform check supports dimension <= {}",
            PRIMES.len()
        )));
    }
    let d = domain.dim();
    let offset = (seed % 65_536) as usize;
    let mut failed_points = 0usize;
    let mut first_failure = None;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut candidates: Vec<(Vec<f64>, f64)> = Vec::new();

    let mut visit = |x: Vec<f64>| match hierarchy.defect(&x) {
        Ok(v) => {
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((x.clone(), v));
            }
            candidates.push((x, v));
            if candidates.len() > 8 {
                candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
                candidates.truncate(8);
            }
        }
        Err(e) => {
            failed_points += 1;
            if first_failure.is_none() {
                first_failure = Some(format!("at {x:?}: {e}"));
            }
        }
    };

    for i in 0..samples {
        visit(domain.point(&halton_point(d, offset + i + 1)));
    }
    for corner in domain.corners() {
        visit(corner);
    }

    let (mut argmin, mut infimum) = best.ok_or_else(|| {
        Error::domain("defect could not be evaluated at any sample point".to_string())
    })?;

    let objective = |x: &[f64]| hierarchy.defect(x).ok();
    for (start, _) in &candidates {
        if let Some((x, v)) = polish_minimum(&objective, start, domain) {
            if v < infimum {
                infimum = v;
                argmin = x;
            }
        }
    }

    Ok(HormanderReport {
        domain: domain.clone(),
        sample_count: samples,
        j0: hierarchy.j0,
        infimum,
        argmin,
        c0,
        pass: infimum >= c0,
        failed_points,
        first_failure,
    })
}
