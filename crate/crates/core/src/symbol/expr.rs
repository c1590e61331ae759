//! Symbol expressions: a closed term set over phase-space coordinates,
//! ε-nets, smooth coefficient fields and smooth scalar profiles, with exact
//! structural differentiation and canonical simplification.
//!
//! Canonicalization folds constants, flattens and sorts n-ary sums and
//! products, collects equal summands and equal power bases, and drops zero
//! terms. Shared `Arc` subtrees plus this normal form make algebraically
//! cancelling constructions (constant-coefficient factorization residuals,
//! b·b against a) collapse to literal zero instead of roundoff noise.

use crate::error::{invalid, Result};
use crate::num;
use crate::scalenets::EpsNet;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use num_complex::Complex64;
use num_traits::Float;

use super::field::FieldFamily;

/// Phase-space variables: lateral positions x_j, depth z, and the dual
/// frequencies (τ, ξ_j). Depth enters symbols as a smooth parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    X(u8),
    Z,
    Tau,
    Xi(u8),
}

impl Var {
    pub fn is_space(self) -> bool {
        matches!(self, Var::X(_) | Var::Z)
    }

    pub fn is_freq(self) -> bool {
        matches!(self, Var::Tau | Var::Xi(_))
    }

    fn tag(self) -> u64 {
        match self {
            Var::X(j) => 0x10 + j as u64,
            Var::Z => 0x20,
            Var::Tau => 0x30,
            Var::Xi(j) => 0x40 + j as u64,
        }
    }
}

/// Evaluation point in phase space (up to two lateral dimensions).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub z: f64,
    pub tau: f64,
    pub xi: [f64; 2],
}

impl PhasePoint {
    pub fn new(x: f64, z: f64, tau: f64, xi: f64) -> Self {
        PhasePoint { x: [x, 0.0], z, tau, xi: [xi, 0.0] }
    }

    pub fn coord(&self, v: Var) -> f64 {
        match v {
            Var::X(j) => self.x[j as usize],
            Var::Z => self.z,
            Var::Tau => self.tau,
            Var::Xi(j) => self.xi[j as usize],
        }
    }

    pub fn with_coord(mut self, v: Var, value: f64) -> Self {
        match v {
            Var::X(j) => self.x[j as usize] = value,
            Var::Z => self.z = value,
            Var::Tau => self.tau = value,
            Var::Xi(j) => self.xi[j as usize] = value,
        }
        self
    }

    /// |(τ, ξ)|
    pub fn freq_norm(&self) -> f64 {
        (self.tau * self.tau + self.xi[0] * self.xi[0] + self.xi[1] * self.xi[1]).sqrt()
    }

    /// ⟨(τ, ξ)⟩
    pub fn freq_bracket(&self) -> f64 {
        (1.0 + self.tau * self.tau + self.xi[0] * self.xi[0] + self.xi[1] * self.xi[1]).sqrt()
    }
}

/// Smooth scalar profiles admitted in symbol expressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileKind {
    Sin,
    Cos,
    Exp,
    /// 0 for s ≤ a, 1 for s ≥ b (smooth exponential join).
    StepUp(f64, f64),
    /// 1 for s ≤ a, 0 for s ≥ b.
    StepDown(f64, f64),
}

impl ProfileKind {
    /// Value of the `ord`-th derivative at a real argument.
    pub fn eval(self, ord: u8, s: f64) -> f64 {
        match self {
            ProfileKind::Sin => match ord % 4 {
                0 => s.sin(),
                1 => s.cos(),
                2 => -s.sin(),
                _ => -s.cos(),
            },
            ProfileKind::Cos => match ord % 4 {
                0 => s.cos(),
                1 => -s.sin(),
                2 => -s.cos(),
                _ => s.sin(),
            },
            ProfileKind::Exp => s.exp(),
            ProfileKind::StepUp(a, b) => {
                if s == f64::INFINITY {
                    return if ord == 0 { 1.0 } else { 0.0 };
                }
                num::smooth_step_up_deriv(s, a, b, ord as usize)
            }
            ProfileKind::StepDown(a, b) => {
                if s == f64::INFINITY {
                    return 0.0;
                }
                num::smooth_step_down_deriv(s, a, b, ord as usize)
            }
        }
    }

    fn tag(self) -> u64 {
        match self {
            ProfileKind::Sin => 1,
            ProfileKind::Cos => 2,
            ProfileKind::Exp => 3,
            ProfileKind::StepUp(a, b) => 4 ^ mix2(a.to_bits(), b.to_bits()),
            ProfileKind::StepDown(a, b) => 5 ^ mix2(b.to_bits(), a.to_bits()).rotate_left(7),
        }
    }
}

/// ε-net leaf (per-ε scalar factor).
#[derive(Debug, Clone)]
pub struct NetLeaf {
    pub label: String,
    pub grid: Arc<Vec<f64>>,
    pub values: Arc<Vec<f64>>,
    hash: u64,
}

impl NetLeaf {
    pub fn from_net(label: &str, net: &EpsNet) -> Self {
        let grid: Vec<f64> = net.grid.values().into();
        let values = net.values.clone();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in grid.iter().chain(values.iter()) {
            h = fnv(h, v.to_bits());
        }
        NetLeaf { label: String::from(label), grid: Arc::new(grid), values: Arc::new(values), hash: h }
    }

    pub fn value_at(&self, eps: f64) -> f64 {
        match lookup_eps(&self.grid, eps) {
            Some(i) => self.values[i],
            None => f64::NAN,
        }
    }
}

pub(crate) fn lookup_eps(grid: &[f64], eps: f64) -> Option<usize> {
    grid.iter().position(|&e| (e - eps).abs() <= 1e-9 * e.max(eps))
}

/// Coefficient-field leaf: an ε-family of smooth periodic (x, z) functions,
/// differentiated structurally by coefficient multiplication.
#[derive(Debug, Clone)]
pub struct FieldLeaf {
    pub label: String,
    pub fam: Arc<FieldFamily>,
    pub dx: u8,
    pub dz: u8,
}

#[derive(Debug)]
pub(crate) enum Kind {
    Const(Complex64),
    Coord(Var),
    Net(NetLeaf),
    Field(FieldLeaf),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Expr, f64),
    Profile(ProfileKind, u8, Expr),
}

#[derive(Debug)]
pub(crate) struct Node {
    pub(crate) hash: u64,
    pub(crate) kind: Kind,
}

/// Immutable, cheaply clonable symbol expression.
#[derive(Debug, Clone)]
pub struct Expr(pub(crate) Arc<Node>);

#[inline]
fn fnv(h: u64, v: u64) -> u64 {
    let mut h = h ^ v;
    h = h.wrapping_mul(0x100_0000_01b3);
    h ^ (h >> 29)
}

#[inline]
fn mix2(a: u64, b: u64) -> u64 {
    fnv(fnv(0x9e37_79b9_7f4a_7c15, a), b)
}

fn hash_kind(kind: &Kind) -> u64 {
    match kind {
        Kind::Const(c) => mix2(1, mix2(c.re.to_bits(), c.im.to_bits())),
        Kind::Coord(v) => mix2(2, v.tag()),
        Kind::Net(n) => mix2(3, n.hash),
        Kind::Field(f) => {
            mix2(4, mix2(f.fam.content_hash(), (f.dx as u64) << 8 | f.dz as u64))
        }
        Kind::Add(ts) => {
            let mut h = 5u64;
            for t in ts {
                h = fnv(h, t.0.hash);
            }
            h
        }
        Kind::Mul(ts) => {
            let mut h = 6u64;
            for t in ts {
                h = fnv(h, t.0.hash);
            }
            h
        }
        Kind::Pow(b, e) => mix2(7, mix2(b.0.hash, e.to_bits())),
        Kind::Profile(k, ord, a) => mix2(8, mix2(k.tag(), mix2(*ord as u64, a.0.hash))),
    }
}

const C_ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const C_ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

impl Expr {
    fn raw(kind: Kind) -> Expr {
        let hash = hash_kind(&kind);
        Expr(Arc::new(Node { hash, kind }))
    }

    pub fn ptr_id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn hash(&self) -> u64 {
        self.0.hash
    }

    // -- constructors -------------------------------------------------------

    pub fn constant(c: impl Into<Complex64>) -> Expr {
        Expr::raw(Kind::Const(c.into()))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn i() -> Expr {
        Expr::constant(Complex64::new(0.0, 1.0))
    }

    pub fn coord(v: Var) -> Expr {
        Expr::raw(Kind::Coord(v))
    }

    pub fn x() -> Expr {
        Expr::coord(Var::X(0))
    }

    pub fn z() -> Expr {
        Expr::coord(Var::Z)
    }

    pub fn tau() -> Expr {
        Expr::coord(Var::Tau)
    }

    pub fn xi() -> Expr {
        Expr::coord(Var::Xi(0))
    }

    pub fn net(label: &str, net: &EpsNet) -> Expr {
        Expr::raw(Kind::Net(NetLeaf::from_net(label, net)))
    }

    pub fn field(label: &str, fam: Arc<FieldFamily>) -> Expr {
        if let Some(c) = fam.as_constant() {
            return Expr::constant(c);
        }
        Expr::raw(Kind::Field(FieldLeaf { label: String::from(label), fam, dx: 0, dz: 0 }))
    }

    pub(crate) fn field_leaf(leaf: FieldLeaf) -> Expr {
        Expr::raw(Kind::Field(leaf))
    }

    pub fn profile(kind: ProfileKind, arg: Expr) -> Expr {
        Expr::profile_d(kind, 0, arg)
    }

    pub(crate) fn profile_d(kind: ProfileKind, ord: u8, arg: Expr) -> Expr {
        if let Kind::Const(c) = &arg.0.kind {
            return Expr::constant(Complex64::new(kind.eval(ord, c.re), 0.0));
        }
        Expr::raw(Kind::Profile(kind, ord, arg))
    }

    /// Canonical n-ary sum.
    pub fn add(terms: Vec<Expr>) -> Expr {
        let mut constant = C_ZERO;
        // (coefficient, factor-part) pairs
        let mut parts: Vec<(Complex64, Expr)> = Vec::new();
        let mut stack = terms;
        stack.reverse();
        while let Some(t) = stack.pop() {
            match &t.0.kind {
                Kind::Add(ts) => {
                    for s in ts.iter().rev() {
                        stack.push(s.clone());
                    }
                }
                Kind::Const(c) => constant += c,
                _ => {
                    let (c, rest) = split_coeff(&t);
                    if c != C_ZERO {
                        parts.push((c, rest));
                    }
                }
            }
        }
        parts.sort_by(|a, b| cmp_expr(&a.1, &b.1));
        let mut merged: Vec<(Complex64, Expr)> = Vec::with_capacity(parts.len());
        for (c, rest) in parts {
            if let Some(last) = merged.last_mut() {
                if exprs_equal(&last.1, &rest) {
                    last.0 += c;
                    continue;
                }
            }
            merged.push((c, rest));
        }
        let mut out: Vec<Expr> = Vec::with_capacity(merged.len() + 1);
        if constant != C_ZERO {
            out.push(Expr::constant(constant));
        }
        for (c, rest) in merged {
            if c == C_ZERO {
                continue;
            }
            if c == C_ONE {
                out.push(rest);
            } else {
                out.push(Expr::mul(vec![Expr::constant(c), rest]));
            }
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::raw(Kind::Add(out)),
        }
    }

    pub fn add2(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::add(vec![a, Expr::neg(b)])
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::mul(vec![Expr::constant(-1.0), a])
    }

    /// Canonical n-ary product. Evaluation of a product short-circuits on a
    /// zero factor, which is what lets cutoff masks excise singular factors.
    pub fn mul(factors: Vec<Expr>) -> Expr {
        let mut coeff = C_ONE;
        let mut bases: Vec<(Expr, f64)> = Vec::new();
        let mut stack = factors;
        stack.reverse();
        while let Some(f) = stack.pop() {
            match &f.0.kind {
                Kind::Mul(fs) => {
                    for s in fs.iter().rev() {
                        stack.push(s.clone());
                    }
                }
                Kind::Const(c) => coeff *= c,
                Kind::Pow(b, e) => bases.push((b.clone(), *e)),
                _ => bases.push((f, 1.0)),
            }
        }
        if coeff == C_ZERO {
            return Expr::zero();
        }
        bases.sort_by(|a, b| cmp_expr(&a.0, &b.0));
        let mut merged: Vec<(Expr, f64)> = Vec::with_capacity(bases.len());
        for (b, e) in bases {
            if let Some(last) = merged.last_mut() {
                if exprs_equal(&last.0, &b) {
                    last.1 += e;
                    continue;
                }
            }
            merged.push((b, e));
        }
        let mut out: Vec<Expr> = Vec::with_capacity(merged.len() + 1);
        for (b, e) in merged {
            if e == 0.0 {
                continue;
            }
            let f = Expr::pow(b, e);
            if let Kind::Const(c) = &f.0.kind {
                coeff *= c;
            } else {
                out.push(f);
            }
        }
        if coeff == C_ZERO {
            return Expr::zero();
        }
        if out.is_empty() {
            return Expr::constant(coeff);
        }
        if coeff != C_ONE {
            out.insert(0, Expr::constant(coeff));
        }
        if out.len() == 1 {
            return out.pop().unwrap();
        }
        Expr::raw(Kind::Mul(out))
    }

    pub fn mul2(a: Expr, b: Expr) -> Expr {
        Expr::mul(vec![a, b])
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::mul(vec![a, Expr::pow(b, -1.0)])
    }

    pub fn recip(a: Expr) -> Expr {
        Expr::pow(a, -1.0)
    }

    /// Real power (principal branch; fractional powers are meant for factors
    /// that stay in the right half plane on their region of use).
    pub fn pow(base: Expr, e: f64) -> Expr {
        if e == 0.0 {
            return Expr::one();
        }
        if e == 1.0 {
            return base;
        }
        match &base.0.kind {
            Kind::Const(c) => Expr::constant(cpowf(*c, e)),
            // (b^p)^n = b^{pn} is unconditionally valid for integral n
            Kind::Pow(b, p) if e.fract() == 0.0 => Expr::pow(b.clone(), p * e),
            // (f g)^n distributes for integral n
            Kind::Mul(fs) if e.fract() == 0.0 => {
                Expr::mul(fs.iter().map(|f| Expr::pow(f.clone(), e)).collect())
            }
            _ => Expr::raw(Kind::Pow(base, e)),
        }
    }

    pub fn sqrt(base: Expr) -> Expr {
        Expr::pow(base, 0.5)
    }

    /// ⟨ξ⟩-type bracket over the given frequency coordinates.
    pub fn bracket_of(freqs: &[Var]) -> Expr {
        let mut terms = vec![Expr::one()];
        for &v in freqs {
            debug_assert!(v.is_freq());
            let c = Expr::coord(v);
            terms.push(Expr::mul2(c.clone(), c));
        }
        Expr::sqrt(Expr::add(terms))
    }

    /// ⟨ξ⟩ for one lateral frequency (no τ).
    pub fn bracket_xi() -> Expr {
        Expr::bracket_of(&[Var::Xi(0)])
    }

    /// ⟨(τ, ξ)⟩ for one lateral frequency.
    pub fn bracket_full() -> Expr {
        Expr::bracket_of(&[Var::Tau, Var::Xi(0)])
    }

    /// |(τ, ξ)| (smooth away from the origin; used inside radial cutoffs that
    /// vanish identically near 0).
    pub fn freq_norm_full() -> Expr {
        let t = Expr::tau();
        let x = Expr::xi();
        Expr::sqrt(Expr::add2(Expr::mul2(t.clone(), t), Expr::mul2(x.clone(), x)))
    }

    // -- inspection ---------------------------------------------------------

    pub fn is_zero(&self) -> bool {
        matches!(&self.0.kind, Kind::Const(c) if *c == C_ZERO)
    }

    pub fn as_const(&self) -> Option<Complex64> {
        match &self.0.kind {
            Kind::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Structural dependence on a variable.
    pub fn depends_on(&self, v: Var) -> bool {
        match &self.0.kind {
            Kind::Const(_) | Kind::Net(_) => false,
            Kind::Coord(w) => *w == v,
            Kind::Field(_) => matches!(v, Var::X(0) | Var::Z),
            Kind::Add(ts) | Kind::Mul(ts) => ts.iter().any(|t| t.depends_on(v)),
            Kind::Pow(b, _) => b.depends_on(v),
            Kind::Profile(_, _, a) => a.depends_on(v),
        }
    }

    pub fn depends_on_space(&self) -> bool {
        match &self.0.kind {
            Kind::Const(_) | Kind::Net(_) => false,
            Kind::Coord(w) => w.is_space(),
            Kind::Field(_) => true,
            Kind::Add(ts) | Kind::Mul(ts) => ts.iter().any(|t| t.depends_on_space()),
            Kind::Pow(b, _) => b.depends_on_space(),
            Kind::Profile(_, _, a) => a.depends_on_space(),
        }
    }

    pub fn depends_on_freq(&self) -> bool {
        match &self.0.kind {
            Kind::Const(_) | Kind::Net(_) | Kind::Field(_) => false,
            Kind::Coord(w) => w.is_freq(),
            Kind::Add(ts) | Kind::Mul(ts) => ts.iter().any(|t| t.depends_on_freq()),
            Kind::Pow(b, _) => b.depends_on_freq(),
            Kind::Profile(_, _, a) => a.depends_on_freq(),
        }
    }

    /// Number of nodes (shared subtrees counted once).
    pub fn node_count(&self) -> usize {
        let mut seen = BTreeMap::new();
        fn walk(e: &Expr, seen: &mut BTreeMap<usize, ()>) {
            if seen.insert(e.ptr_id(), ()).is_some() {
                return;
            }
            match &e.0.kind {
                Kind::Add(ts) | Kind::Mul(ts) => ts.iter().for_each(|t| walk(t, seen)),
                Kind::Pow(b, _) => walk(b, seen),
                Kind::Profile(_, _, a) => walk(a, seen),
                _ => {}
            }
        }
        walk(self, &mut seen);
        seen.len()
    }

    // -- evaluation ---------------------------------------------------------

    /// Evaluate at a phase point for one ε. Nets and per-ε fields must carry
    /// `eps` on their grid (checked by [`Expr::validate_eps`] up front).
    pub fn eval(&self, p: &PhasePoint, eps: f64) -> Complex64 {
        let mut memo = BTreeMap::new();
        self.eval_memo(p, eps, &mut memo)
    }

    fn eval_memo(&self, p: &PhasePoint, eps: f64, memo: &mut BTreeMap<usize, Complex64>) -> Complex64 {
        let key = self.ptr_id();
        if let Some(v) = memo.get(&key) {
            return *v;
        }
        let v = match &self.0.kind {
            Kind::Const(c) => *c,
            Kind::Coord(var) => Complex64::new(p.coord(*var), 0.0),
            Kind::Net(n) => Complex64::new(n.value_at(eps), 0.0),
            Kind::Field(f) => {
                Complex64::new(f.fam.eval(eps, p.x[0], p.z, f.dx as usize, f.dz as usize), 0.0)
            }
            Kind::Add(ts) => {
                let mut acc = C_ZERO;
                for t in ts {
                    acc += t.eval_memo(p, eps, memo);
                }
                acc
            }
            Kind::Mul(ts) => {
                // a literal zero factor wins over NaN/inf from excised factors
                let mut acc = C_ONE;
                let mut zero = false;
                for t in ts {
                    let v = t.eval_memo(p, eps, memo);
                    if v == C_ZERO {
                        zero = true;
                    } else if !zero {
                        acc *= v;
                    }
                }
                if zero {
                    C_ZERO
                } else {
                    acc
                }
            }
            Kind::Pow(b, e) => cpowf(b.eval_memo(p, eps, memo), *e),
            Kind::Profile(kind, ord, a) => {
                let s = a.eval_memo(p, eps, memo).re;
                Complex64::new(kind.eval(*ord, s), 0.0)
            }
        };
        memo.insert(key, v);
        v
    }

    /// Check that every ε-leaf can resolve `eps`.
    pub fn validate_eps(&self, eps: f64) -> Result<()> {
        match &self.0.kind {
            Kind::Net(n) => {
                if lookup_eps(&n.grid, eps).is_none() {
                    return Err(invalid(alloc::format!(
                        "eps = {eps} is not on the grid of net '{}'",
                        n.label
                    )));
                }
                Ok(())
            }
            Kind::Field(f) => {
                if !f.fam.has_eps(eps) {
                    return Err(invalid(alloc::format!(
                        "eps = {eps} is not on the grid of field '{}'",
                        f.label
                    )));
                }
                Ok(())
            }
            Kind::Add(ts) | Kind::Mul(ts) => ts.iter().try_for_each(|t| t.validate_eps(eps)),
            Kind::Pow(b, _) => b.validate_eps(eps),
            Kind::Profile(_, _, a) => a.validate_eps(eps),
            _ => Ok(()),
        }
    }

    // -- differentiation ----------------------------------------------------

    /// Exact structural partial derivative.
    pub fn deriv(&self, v: Var) -> Expr {
        let mut memo = BTreeMap::new();
        self.deriv_memo(v, &mut memo)
    }

    fn deriv_memo(&self, v: Var, memo: &mut BTreeMap<usize, Expr>) -> Expr {
        let key = self.ptr_id();
        if let Some(d) = memo.get(&key) {
            return d.clone();
        }
        let d = match &self.0.kind {
            Kind::Const(_) | Kind::Net(_) => Expr::zero(),
            Kind::Coord(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Kind::Field(f) => match v {
                Var::X(0) => Expr::field_leaf(FieldLeaf { dx: f.dx + 1, ..f.clone() }),
                Var::Z => Expr::field_leaf(FieldLeaf { dz: f.dz + 1, ..f.clone() }),
                _ => Expr::zero(),
            },
            Kind::Add(ts) => Expr::add(ts.iter().map(|t| t.deriv_memo(v, memo)).collect()),
            Kind::Mul(ts) => {
                let mut sum = Vec::with_capacity(ts.len());
                for (i, t) in ts.iter().enumerate() {
                    let dt = t.deriv_memo(v, memo);
                    if dt.is_zero() {
                        continue;
                    }
                    let mut fs: Vec<Expr> = Vec::with_capacity(ts.len());
                    for (j, s) in ts.iter().enumerate() {
                        fs.push(if i == j { dt.clone() } else { s.clone() });
                    }
                    sum.push(Expr::mul(fs));
                }
                Expr::add(sum)
            }
            Kind::Pow(b, e) => {
                let db = b.deriv_memo(v, memo);
                if db.is_zero() {
                    Expr::zero()
                } else {
                    Expr::mul(vec![Expr::constant(*e), Expr::pow(b.clone(), e - 1.0), db])
                }
            }
            Kind::Profile(kind, ord, a) => {
                let da = a.deriv_memo(v, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    Expr::mul2(Expr::profile_d(*kind, ord + 1, a.clone()), da)
                }
            }
        };
        memo.insert(key, d.clone());
        d
    }

    /// Structural complex conjugate. Exact because all leaves except
    /// constants are real valued, and principal powers are used on factors
    /// that avoid the negative real axis.
    pub fn conj(&self) -> Expr {
        match &self.0.kind {
            Kind::Const(c) => Expr::constant(c.conj()),
            Kind::Coord(_) | Kind::Net(_) | Kind::Field(_) => self.clone(),
            Kind::Add(ts) => Expr::add(ts.iter().map(|t| t.conj()).collect()),
            Kind::Mul(ts) => Expr::mul(ts.iter().map(|t| t.conj()).collect()),
            Kind::Pow(b, e) => Expr::pow(b.conj(), *e),
            Kind::Profile(kind, ord, a) => Expr::profile_d(*kind, *ord, a.conj()),
        }
    }
}

pub(crate) fn cpowf(c: Complex64, e: f64) -> Complex64 {
    if c == C_ZERO {
        return if e > 0.0 {
            C_ZERO
        } else {
            Complex64::new(f64::INFINITY, 0.0)
        };
    }
    if c.im == 0.0 && c.re > 0.0 {
        return Complex64::new(c.re.powf(e), 0.0);
    }
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        // exact integer powers keep real arithmetic real
        let n = e as i64;
        let mut acc = C_ONE;
        let base = if n < 0 { C_ONE / c } else { c };
        for _ in 0..n.unsigned_abs() {
            acc *= base;
        }
        return acc;
    }
    c.powf(e)
}

/// Split a canonical term into (complex coefficient, remaining factor).
fn split_coeff(e: &Expr) -> (Complex64, Expr) {
    match &e.0.kind {
        Kind::Const(c) => (*c, Expr::one()),
        Kind::Mul(fs) => {
            if let Kind::Const(c) = &fs[0].0.kind {
                let rest: Vec<Expr> = fs[1..].to_vec();
                let r = if rest.len() == 1 {
                    rest.into_iter().next().unwrap()
                } else {
                    // already canonical, rebuild without re-normalizing
                    Expr::raw(Kind::Mul(rest))
                };
                (*c, r)
            } else {
                (C_ONE, e.clone())
            }
        }
        _ => (C_ONE, e.clone()),
    }
}

/// Deterministic structural total order (hash first, full compare on ties).
pub(crate) fn cmp_expr(a: &Expr, b: &Expr) -> Ordering {
    if Arc::ptr_eq(&a.0, &b.0) {
        return Ordering::Equal;
    }
    match a.0.hash.cmp(&b.0.hash) {
        Ordering::Equal => cmp_deep(a, b),
        o => o,
    }
}

fn kind_rank(k: &Kind) -> u8 {
    match k {
        Kind::Const(_) => 0,
        Kind::Coord(_) => 1,
        Kind::Net(_) => 2,
        Kind::Field(_) => 3,
        Kind::Add(_) => 4,
        Kind::Mul(_) => 5,
        Kind::Pow(_, _) => 6,
        Kind::Profile(_, _, _) => 7,
    }
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.to_bits().cmp(&b.to_bits())
}

fn cmp_deep(a: &Expr, b: &Expr) -> Ordering {
    let (ka, kb) = (&a.0.kind, &b.0.kind);
    match kind_rank(ka).cmp(&kind_rank(kb)) {
        Ordering::Equal => {}
        o => return o,
    }
    match (ka, kb) {
        (Kind::Const(x), Kind::Const(y)) => {
            cmp_f64(x.re, y.re).then(cmp_f64(x.im, y.im))
        }
        (Kind::Coord(x), Kind::Coord(y)) => x.tag().cmp(&y.tag()),
        (Kind::Net(x), Kind::Net(y)) => x
            .hash
            .cmp(&y.hash)
            .then_with(|| x.label.cmp(&y.label)),
        (Kind::Field(x), Kind::Field(y)) => x
            .fam
            .content_hash()
            .cmp(&y.fam.content_hash())
            .then(x.dx.cmp(&y.dx))
            .then(x.dz.cmp(&y.dz))
            .then_with(|| x.label.cmp(&y.label)),
        (Kind::Add(xs), Kind::Add(ys)) | (Kind::Mul(xs), Kind::Mul(ys)) => {
            match xs.len().cmp(&ys.len()) {
                Ordering::Equal => {
                    for (x, y) in xs.iter().zip(ys) {
                        match cmp_expr(x, y) {
                            Ordering::Equal => {}
                            o => return o,
                        }
                    }
                    Ordering::Equal
                }
                o => o,
            }
        }
        (Kind::Pow(xb, xe), Kind::Pow(yb, ye)) => {
            cmp_expr(xb, yb).then(cmp_f64(*xe, *ye))
        }
        (Kind::Profile(xk, xo, xa), Kind::Profile(yk, yo, ya)) => xk
            .tag()
            .cmp(&yk.tag())
            .then(xo.cmp(yo))
            .then_with(|| cmp_expr(xa, ya)),
        _ => Ordering::Equal,
    }
}

pub(crate) fn exprs_equal(a: &Expr, b: &Expr) -> bool {
    cmp_expr(a, b) == Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, z: f64, tau: f64, xi: f64) -> PhasePoint {
        PhasePoint::new(x, z, tau, xi)
    }

    #[test]
    fn constant_folding_and_collection() {
        let e = Expr::add(vec![
            Expr::mul2(Expr::constant(2.0), Expr::x()),
            Expr::mul2(Expr::constant(-2.0), Expr::x()),
            Expr::constant(3.0),
        ]);
        assert_eq!(e.as_const(), Some(Complex64::new(3.0, 0.0)));
    }

    #[test]
    fn sqrt_times_sqrt_collapses() {
        let a = Expr::add2(Expr::one(), Expr::mul2(Expr::xi(), Expr::xi()));
        let b = Expr::sqrt(a.clone());
        let sq = Expr::mul2(b.clone(), b);
        assert!(exprs_equal(&sq, &a));
    }

    #[test]
    fn derivative_of_product_rule() {
        // d/dxi (xi * tau) = tau
        let e = Expr::mul2(Expr::xi(), Expr::tau());
        let d = e.deriv(Var::Xi(0));
        let pt = p(0.3, 0.0, 2.5, -1.0);
        assert!((d.eval(&pt, 1e-3) - Complex64::new(2.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn chain_rule_through_profiles() {
        // d/dx sin(2x) = 2 cos(2x)
        let e = Expr::profile(ProfileKind::Sin, Expr::mul2(Expr::constant(2.0), Expr::x()));
        let d = e.deriv(Var::X(0));
        let pt = p(0.7, 0.0, 0.0, 0.0);
        let expect = 2.0 * (1.4f64).cos();
        assert!((d.eval(&pt, 1.0).re - expect).abs() < 1e-14);
    }

    #[test]
    fn bracket_derivative_at_origin_vanishes() {
        let b2 = Expr::mul2(Expr::bracket_xi(), Expr::bracket_xi());
        let d = b2.deriv(Var::Xi(0));
        assert!(d.eval(&p(0.0, 0.0, 0.0, 0.0), 1.0).norm() < 1e-15);
        // d(xi^2+1)/dxi = 2 xi
        assert!((d.eval(&p(0.0, 0.0, 0.0, 3.0), 1.0).re - 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_factor_masks_nan() {
        // step(|xi|) * 1/xi at xi = 0: mask wins
        let mask = Expr::profile(ProfileKind::StepUp(1.0, 2.0), Expr::sqrt(Expr::mul2(Expr::xi(), Expr::xi())));
        let e = Expr::mul2(mask, Expr::recip(Expr::xi()));
        assert_eq!(e.eval(&p(0.0, 0.0, 0.0, 0.0), 1.0), Complex64::new(0.0, 0.0));
        // and is untouched beyond the join
        let v = e.eval(&p(0.0, 0.0, 0.0, 4.0), 1.0);
        assert!((v.re - 0.25).abs() < 1e-15);
    }

    #[test]
    fn conj_flips_constants_only_on_real_trees() {
        let e = Expr::mul2(Expr::i(), Expr::xi());
        let c = e.conj();
        let v = c.eval(&p(0.0, 0.0, 0.0, 2.0), 1.0);
        assert!((v - Complex64::new(0.0, -2.0)).norm() < 1e-15);
    }

    #[test]
    fn canonical_order_is_deterministic() {
        let a = Expr::add2(Expr::x(), Expr::tau());
        let b = Expr::add2(Expr::tau(), Expr::x());
        assert!(exprs_equal(&a, &b));
        assert_eq!(a.hash(), b.hash());
    }
}
