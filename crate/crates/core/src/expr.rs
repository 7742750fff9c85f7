//! Symbolic scalar expressions over an ordered variable list.
//!
//! Expressions carry the coefficient functions of a model (drift, diffusion
//! columns, jump coefficient, Lévy kernels) and support exact differentiation,
//! which is what the Lie-bracket machinery is built on. Variables are indices
//! into a [`VarSet`]; the same tree can therefore be interpreted over `x1..xd`,
//! over `x1..xd, z1..zm`, or over `x.., v.., z..` without rewriting.

use std::fmt;

use crate::error::{Error, Result};

/// Unary operations of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Atan,
}

/// Binary operations of the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Construct through the smart constructors ([`Expr::add`],
/// [`Expr::mul`], ...) which fold constants and keep trees small.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl UnOp {
    fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "-",
            UnOp::Sin => "sin",
            UnOp::Cos => "cos",
            UnOp::Exp => "exp",
            UnOp::Log => "log",
            UnOp::Sqrt => "sqrt",
            UnOp::Abs => "abs",
            UnOp::Atan => "atan",
        }
    }

    fn apply_checked(self, v: f64) -> Result<f64> {
        let out = match self {
            UnOp::Neg => -v,
            UnOp::Sin => v.sin(),
            UnOp::Cos => v.cos(),
            UnOp::Exp => v.exp(),
            UnOp::Log => {
                if v <= 0.0 {
                    return Err(Error::domain(format!("log of non-positive value {v}")));
                }
                v.ln()
            }
            UnOp::Sqrt => {
                if v < 0.0 {
                    return Err(Error::domain(format!("sqrt of negative value {v}")));
                }
                v.sqrt()
            }
            UnOp::Abs => v.abs(),
            UnOp::Atan => v.atan(),
        };
        if out.is_finite() {
            Ok(out)
        } else {
            Err(Error::domain(format!("{}({v}) is not finite", self.name())))
        }
    }
}

fn pow_checked(a: f64, b: f64) -> Result<f64> {
    let out = a.powf(b);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::domain(format!("{a}^{b} is not finite")))
    }
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn is_const(&self, c: f64) -> bool {
        matches!(self, Expr::Const(v) if *v == c)
    }

    pub fn is_zero(&self) -> bool {
        self.is_const(0.0)
    }

    // ---- smart constructors -------------------------------------------------

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if (x + y).is_finite() => Expr::Const(x + y),
            (a, b) if a.is_zero() => b,
            (a, b) if b.is_zero() => a,
            (a, b) => Expr::Binary(BinOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if (x - y).is_finite() => Expr::Const(x - y),
            (a, b) if b.is_zero() => a,
            (a, b) if a.is_zero() => Expr::neg(b),
            (a, b) if a == b => Expr::zero(),
            (a, b) => Expr::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if (x * y).is_finite() => Expr::Const(x * y),
            (a, b) if a.is_zero() || b.is_zero() => Expr::zero(),
            (a, b) if a.is_const(1.0) => b,
            (a, b) if b.is_const(1.0) => a,
            (a, b) if a.is_const(-1.0) => Expr::neg(b),
            (a, b) if b.is_const(-1.0) => Expr::neg(a),
            (a, b) => Expr::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if y != 0.0 && (x / y).is_finite() => {
                Expr::Const(x / y)
            }
            (a, b) if a.is_zero() && !b.is_zero() => Expr::zero(),
            (a, b) if b.is_const(1.0) => a,
            (a, b) => Expr::Binary(BinOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => match pow_checked(x, y) {
                Ok(v) => Expr::Const(v),
                Err(_) => Expr::Binary(
                    BinOp::Pow,
                    Box::new(Expr::Const(x)),
                    Box::new(Expr::Const(y)),
                ),
            },
            (a, b) if b.is_const(1.0) => a,
            (_, b) if b.is_zero() => Expr::one(),
            (a, b) => Expr::Binary(BinOp::Pow, Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Unary(UnOp::Neg, inner) => *inner,
            a => Expr::Unary(UnOp::Neg, Box::new(a)),
        }
    }

    pub fn unary(op: UnOp, a: Expr) -> Expr {
        if op == UnOp::Neg {
            return Expr::neg(a);
        }
        if let Expr::Const(x) = a {
            if let Ok(v) = op.apply_checked(x) {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Box::new(a))
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::unary(UnOp::Sin, a)
    }
    pub fn cos(a: Expr) -> Expr {
        Expr::unary(UnOp::Cos, a)
    }
    pub fn exp(a: Expr) -> Expr {
        Expr::unary(UnOp::Exp, a)
    }
    pub fn sqrt(a: Expr) -> Expr {
        Expr::unary(UnOp::Sqrt, a)
    }

    // ---- evaluation ---------------------------------------------------------

    /// Evaluate at a point. Any non-finite intermediate raises a domain error.
    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => vars.get(*i).copied().ok_or_else(|| {
                Error::DimMismatch(format!(
                    "expression uses variable #{} but only {} values were supplied",
                    i + 1,
                    vars.len()
                ))
            }),
            Expr::Unary(op, a) => op.apply_checked(a.eval(vars)?),
            Expr::Binary(op, a, b) => {
                let x = a.eval(vars)?;
                let y = b.eval(vars)?;
                let out = match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::domain(format!("division by zero ({x}/0)")));
                        }
                        x / y
                    }
                    BinOp::Pow => return pow_checked(x, y),
                };
                if out.is_finite() {
                    Ok(out)
                } else {
                    Err(Error::domain("non-finite intermediate value".to_string()))
                }
            }
        }
    }

    // ---- differentiation ----------------------------------------------------

    /// Exact partial derivative with respect to variable index `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Unary(op, a) => {
                if !a.contains_var(var) {
                    return Expr::zero();
                }
                let da = a.diff(var);
                let a = (**a).clone();
                match op {
                    UnOp::Neg => Expr::neg(da),
                    UnOp::Sin => Expr::mul(Expr::cos(a), da),
                    UnOp::Cos => Expr::neg(Expr::mul(Expr::sin(a), da)),
                    UnOp::Exp => Expr::mul(Expr::exp(a), da),
                    UnOp::Log => Expr::div(da, a),
                    UnOp::Sqrt => Expr::div(da, Expr::mul(Expr::constant(2.0), Expr::sqrt(a))),
                    // d|u| = u/|u| du; undefined at u = 0, surfaces as a domain
                    // error there rather than a silent wrong value.
                    UnOp::Abs => Expr::mul(Expr::div(a.clone(), Expr::unary(UnOp::Abs, a)), da),
                    UnOp::Atan => Expr::div(da, Expr::add(Expr::one(), Expr::mul(a.clone(), a))),
                }
            }
            Expr::Binary(op, a, b) => {
                if !self.contains_var(var) {
                    return Expr::zero();
                }
                let (a, b) = ((**a).clone(), (**b).clone());
                let da = a.diff(var);
                let db = b.diff(var);
                match op {
                    BinOp::Add => Expr::add(da, db),
                    BinOp::Sub => Expr::sub(da, db),
                    BinOp::Mul => Expr::add(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                    BinOp::Div => Expr::div(
                        Expr::sub(Expr::mul(da, b.clone()), Expr::mul(a.clone(), db)),
                        Expr::mul(b.clone(), b),
                    ),
                    BinOp::Pow => match b {
                        // n u^(n-1) u'
                        Expr::Const(n) => Expr::mul(
                            Expr::mul(
                                Expr::constant(n),
                                Expr::pow(a.clone(), Expr::constant(n - 1.0)),
                            ),
                            da,
                        ),
                        b => {
                            // u^v (v' log u + v u'/u)
                            let logu = Expr::unary(UnOp::Log, a.clone());
                            Expr::mul(
                                Expr::pow(a.clone(), b.clone()),
                                Expr::add(Expr::mul(db, logu), Expr::div(Expr::mul(b, da), a)),
                            )
                        }
                    },
                }
            }
        }
    }

    // ---- structural helpers -------------------------------------------------

    pub fn contains_var(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Unary(_, a) => a.contains_var(var),
            Expr::Binary(_, a, b) => a.contains_var(var) || b.contains_var(var),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Replace variable `var` by `value` everywhere, re-folding.
    pub fn substitute(&self, var: usize, value: &Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => {
                if *i == var {
                    value.clone()
                } else {
                    Expr::Var(*i)
                }
            }
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(var, value)),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.substitute(var, value), b.substitute(var, value));
                match op {
                    BinOp::Add => Expr::add(a, b),
                    BinOp::Sub => Expr::sub(a, b),
                    BinOp::Mul => Expr::mul(a, b),
                    BinOp::Div => Expr::div(a, b),
                    BinOp::Pow => Expr::pow(a, b),
                }
            }
        }
    }

    /// Rewrite variable indices through `map` (index -> new index).
    pub fn remap_vars(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(map(*i)),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.remap_vars(map))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.remap_vars(map)),
                Box::new(b.remap_vars(map)),
            ),
        }
    }

    /// Simplify: constant folding, neutral-element elimination and like-term
    /// merging on flattened sums. Not a general CAS; identically-zero detection
    /// beyond this is not attempted.
    pub fn simplify(&self) -> Expr {
        let node = match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(*i),
            Expr::Unary(op, a) => Expr::unary(*op, a.simplify()),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match op {
                    BinOp::Add => Expr::add(a, b),
                    BinOp::Sub => Expr::sub(a, b),
                    BinOp::Mul => Expr::mul(a, b),
                    BinOp::Div => Expr::div(a, b),
                    BinOp::Pow => Expr::pow(a, b),
                }
            }
        };
        match &node {
            Expr::Binary(BinOp::Add | BinOp::Sub, _, _) => collect_sum(&node),
            Expr::Binary(BinOp::Mul, _, _) => collect_product(&node),
            _ => node,
        }
    }

    fn sort_key(&self) -> u8 {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(_) => 1,
            Expr::Unary(..) => 2,
            Expr::Binary(..) => 3,
        }
    }

    /// Deterministic total order used to canonicalize sums and products.
    pub fn cmp_structural(&self, other: &Expr) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match self.sort_key().cmp(&other.sort_key()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (self, other) {
            (Expr::Const(a), Expr::Const(b)) => a.total_cmp(b),
            (Expr::Var(a), Expr::Var(b)) => a.cmp(b),
            (Expr::Unary(oa, a), Expr::Unary(ob, b)) => {
                oa.cmp(ob).then_with(|| a.cmp_structural(b))
            }
            (Expr::Binary(oa, a1, a2), Expr::Binary(ob, b1, b2)) => oa
                .cmp(ob)
                .then_with(|| a1.cmp_structural(b1))
                .then_with(|| a2.cmp_structural(b2)),
            _ => unreachable!(),
        }
    }
}

// ---- like-term collection ----------------------------------------------------

/// Split an expression into (coefficient, core factor), peeling constants and
/// negations: `3*x*sin(y)` -> (3, x*sin(y)), `-x` -> (-1, x).
fn split_term(e: &Expr) -> (f64, Expr) {
    match e {
        Expr::Const(c) => (*c, Expr::one()),
        Expr::Unary(UnOp::Neg, a) => {
            let (c, core) = split_term(a);
            (-c, core)
        }
        Expr::Binary(BinOp::Mul, a, b) => {
            let (ca, fa) = split_term(a);
            let (cb, fb) = split_term(b);
            (ca * cb, Expr::mul(fa, fb))
        }
        other => (1.0, other.clone()),
    }
}

fn flatten_sum(e: &Expr, sign: f64, out: &mut Vec<(f64, Expr)>) {
    match e {
        Expr::Binary(BinOp::Add, a, b) => {
            flatten_sum(a, sign, out);
            flatten_sum(b, sign, out);
        }
        Expr::Binary(BinOp::Sub, a, b) => {
            flatten_sum(a, sign, out);
            flatten_sum(b, -sign, out);
        }
        Expr::Unary(UnOp::Neg, a) => flatten_sum(a, -sign, out),
        other => {
            let (c, core) = split_term(other);
            out.push((sign * c, core));
        }
    }
}

fn term_from(coeff: f64, core: Expr) -> Expr {
    if core.is_const(1.0) {
        Expr::constant(coeff)
    } else if coeff == 1.0 {
        core
    } else if coeff == -1.0 {
        Expr::neg(core)
    } else {
        Expr::mul(Expr::constant(coeff), core)
    }
}

/// Matches sin(u)² / cos(u)² cores (either `Pow(f, 2)` or `f*f`).
fn trig_square(core: &Expr) -> Option<(UnOp, &Expr)> {
    let inner = match core {
        Expr::Binary(BinOp::Pow, f, e) if e.is_const(2.0) => f,
        Expr::Binary(BinOp::Mul, f, g) if f == g => f,
        _ => return None,
    };
    match &**inner {
        Expr::Unary(op @ (UnOp::Sin | UnOp::Cos), arg) => Some((*op, arg)),
        _ => None,
    }
}

/// Replace matching c·sin²(u) + c·cos²(u) pairs by the constant c. Brackets
/// of trigonometric fields produce these constantly; without the rule the
/// hierarchy would miss identically-constant fields.
fn eliminate_pythagorean_pairs(terms: &mut Vec<(f64, Expr)>) {
    let mut constant = 0.0;
    let mut i = 0;
    'outer: while i < terms.len() {
        if let Some((UnOp::Sin, arg)) = trig_square(&terms[i].1) {
            let arg = arg.clone();
            let c = terms[i].0;
            for j in 0..terms.len() {
                if j == i {
                    continue;
                }
                if let Some((UnOp::Cos, arg2)) = trig_square(&terms[j].1) {
                    if *arg2 == arg && terms[j].0 == c {
                        constant += c;
                        let (a, b) = (i.max(j), i.min(j));
                        terms.remove(a);
                        terms.remove(b);
                        i = 0;
                        continue 'outer;
                    }
                }
            }
        }
        i += 1;
    }
    if constant != 0.0 {
        terms.push((constant, Expr::one()));
    }
}

fn collect_sum(e: &Expr) -> Expr {
    let mut terms = Vec::new();
    flatten_sum(e, 1.0, &mut terms);
    terms.sort_by(|a, b| a.1.cmp_structural(&b.1));

    let mut merged: Vec<(f64, Expr)> = Vec::with_capacity(terms.len());
    for (c, core) in terms {
        match merged.last_mut() {
            Some((mc, mcore)) if *mcore == core => *mc += c,
            _ => merged.push((c, core)),
        }
    }
    merged.retain(|(c, _)| *c != 0.0);
    eliminate_pythagorean_pairs(&mut merged);
    merged.sort_by(|a, b| a.1.cmp_structural(&b.1));
    let mut folded: Vec<(f64, Expr)> = Vec::with_capacity(merged.len());
    for (c, core) in merged {
        match folded.last_mut() {
            Some((mc, mcore)) if *mcore == core => *mc += c,
            _ => folded.push((c, core)),
        }
    }
    folded.retain(|(c, _)| *c != 0.0);
    let merged = folded;

    let mut out: Option<Expr> = None;
    for (c, core) in merged {
        let term = term_from(c, core);
        out = Some(match out {
            None => term,
            Some(acc) => {
                // keep subtraction rather than `acc + -1*t`
                if let Expr::Unary(UnOp::Neg, inner) = &term {
                    Expr::sub(acc, (**inner).clone())
                } else if let Expr::Const(c) = term {
                    if c < 0.0 {
                        Expr::sub(acc, Expr::constant(-c))
                    } else {
                        Expr::add(acc, term)
                    }
                } else {
                    Expr::add(acc, term)
                }
            }
        });
    }
    out.unwrap_or_else(Expr::zero)
}

fn flatten_product(e: &Expr, coeff: &mut f64, out: &mut Vec<Expr>) {
    match e {
        Expr::Const(c) => *coeff *= c,
        Expr::Unary(UnOp::Neg, a) => {
            *coeff = -*coeff;
            flatten_product(a, coeff, out);
        }
        Expr::Binary(BinOp::Mul, a, b) => {
            flatten_product(a, coeff, out);
            flatten_product(b, coeff, out);
        }
        other => out.push(other.clone()),
    }
}

fn collect_product(e: &Expr) -> Expr {
    let mut coeff = 1.0;
    let mut factors = Vec::new();
    flatten_product(e, &mut coeff, &mut factors);
    if coeff == 0.0 {
        return Expr::zero();
    }
    factors.sort_by(|a, b| a.cmp_structural(b));
    let mut out = Expr::constant(coeff);
    for f in factors {
        out = Expr::mul(out, f);
    }
    out
}

// ---- variable sets ------------------------------------------------------------

/// Ordered named variables an expression is parsed and printed against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSet {
    names: Vec<String>,
}

impl VarSet {
    pub fn new(names: Vec<String>) -> VarSet {
        VarSet { names }
    }

    /// `x1..xd`.
    pub fn states(d: usize) -> VarSet {
        VarSet::new((1..=d).map(|i| format!("x{i}")).collect())
    }

    /// `x1..xd, z1..zm` — state plus jump mark.
    pub fn states_marks(d: usize, m: usize) -> VarSet {
        let mut names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        names.extend((1..=m).map(|i| format!("z{i}")));
        VarSet::new(names)
    }

    /// `x1..xd, v1..vd, z1..zd` — kinetic position, velocity and mark blocks.
    pub fn kinetic(d: usize) -> VarSet {
        let mut names: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        names.extend((1..=d).map(|i| format!("v{i}")));
        names.extend((1..=d).map(|i| format!("z{i}")));
        VarSet::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }
}

// ---- parser --------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a VarSet,
}

const FUNCS: &[(&str, UnOp)] = &[
    ("sin", UnOp::Sin),
    ("cos", UnOp::Cos),
    ("exp", UnOp::Exp),
    ("log", UnOp::Log),
    ("sqrt", UnOp::Sqrt),
    ("abs", UnOp::Abs),
    ("atan", UnOp::Atan),
];

impl<'a> Parser<'a> {
    fn new(src: &'a str, vars: &'a VarSet) -> Parser<'a> {
        Parser {
            src: src.as_bytes(),
            pos: 0,
            vars,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(Error::Syntax {
                offset: self.pos,
                msg: format!("expected `{}`", c as char),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.atom()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                let inner = self.atom()?;
                // normalize so that printing round-trips: -2.5 is Const(-2.5)
                Ok(match inner {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::Unary(UnOp::Neg, Box::new(other)),
                })
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(Error::Syntax {
                offset: self.pos,
                msg: "expected a number, identifier, function call or `(`".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(|c| c.is_ascii_digit()) {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = mark; // `e` belongs to an identifier, not this literal
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| Error::Syntax {
                offset: start,
                msg: format!("invalid number literal `{text}`"),
            })
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if let Some((_, op)) = FUNCS.iter().find(|(n, _)| *n == name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Expr::Unary(*op, Box::new(arg)));
        }
        if let Some(i) = self.vars.index_of(name) {
            return Ok(Expr::Var(i));
        }
        Err(Error::UnknownIdent {
            name: name.to_string(),
            offset: start,
        })
    }

    fn at_end(&mut self) -> bool {
        self.peek().is_none()
    }
}

/// Parse a single expression over `vars`.
pub fn parse(src: &str, vars: &VarSet) -> Result<Expr> {
    let mut p = Parser::new(src, vars);
    let e = p.expr()?;
    if !p.at_end() {
        return Err(Error::Syntax {
            offset: p.pos,
            msg: "unexpected trailing input".into(),
        });
    }
    Ok(e)
}

/// Parse a comma-separated list of expressions over `vars`.
pub fn parse_list(src: &str, vars: &VarSet) -> Result<Vec<Expr>> {
    let mut p = Parser::new(src, vars);
    let mut out = vec![p.expr()?];
    while p.peek() == Some(b',') {
        p.pos += 1;
        out.push(p.expr()?);
    }
    if !p.at_end() {
        return Err(Error::Syntax {
            offset: p.pos,
            msg: "unexpected trailing input".into(),
        });
    }
    Ok(out)
}

// ---- printing --------------------------------------------------------------------

/// Wrapper that renders an expression in the input grammar, so that
/// `parse(print(e)) == e` for any tree built by this module.
pub struct DisplayExpr<'a> {
    expr: &'a Expr,
    vars: &'a VarSet,
}

impl Expr {
    pub fn display<'a>(&'a self, vars: &'a VarSet) -> DisplayExpr<'a> {
        DisplayExpr { expr: self, vars }
    }

    pub fn to_grammar_string(&self, vars: &VarSet) -> String {
        self.display(vars).to_string()
    }
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) => {
            if *c < 0.0 {
                1 // prints with a leading minus
            } else {
                4
            }
        }
        Expr::Var(_) => 4,
        Expr::Unary(UnOp::Neg, _) => 1,
        Expr::Unary(..) => 4, // function call carries its own parentheses
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Binary(BinOp::Pow, ..) => 3,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, vars: &VarSet, min_prec: u8) -> fmt::Result {
    let own = prec(e);
    let parens = own < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        Expr::Const(c) => write!(f, "{c}")?,
        Expr::Var(i) => write!(f, "{}", vars.name(*i))?,
        Expr::Unary(UnOp::Neg, a) => {
            write!(f, "-")?;
            // `- atom`: the operand must print as an atom
            write_expr(f, a, vars, 4)?;
        }
        Expr::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_expr(f, a, vars, 0)?;
            write!(f, ")")?;
        }
        Expr::Binary(op, a, b) => {
            let (sym, lp, rp) = match op {
                BinOp::Add => ("+", 1, 2),
                BinOp::Sub => ("-", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 4, 4),
            };
            // a + -b and a * -2 would not re-parse; force parens on negative heads
            write_expr(f, a, vars, lp)?;
            write!(f, "{sym}")?;
            let rp = match (op, &**b) {
                (BinOp::Add | BinOp::Sub, b2) if prec(b2) == 1 => 2,
                _ => rp,
            };
            write_expr(f, b, vars, rp)?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.vars, 0)
    }
}
