//! Vectorized symbol tabulation for quantization: evaluates a symbol on the
//! product of lateral grid points and FFT frequencies, one x-column at a
//! time, sharing frequency-only subtrees across columns and freeing
//! mixed-node buffers as soon as their parents have consumed them.

use crate::symbol::expr::{Expr, Kind, ProfileKind, Var};
use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

const C_ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const C_ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

#[derive(Clone)]
enum Value {
    Scalar(Complex64),
    Vector(Arc<Vec<Complex64>>),
}

impl Value {
    fn at(&self, i: usize) -> Complex64 {
        match self {
            Value::Scalar(c) => *c,
            Value::Vector(v) => v[i],
        }
    }
}

/// Evaluates one symbol over `(x, (τ, ξ))` tables at fixed depth and ε.
pub struct FreqTable {
    expr: Expr,
    z: f64,
    eps: f64,
    freqs: Arc<Vec<(f64, f64)>>,
    /// (depends_space, depends_freq) per node.
    flags: BTreeMap<usize, (bool, bool)>,
    /// total parent references per node, for column-local buffer release
    uses: BTreeMap<usize, usize>,
    /// cached values for nodes independent of space
    shared: BTreeMap<usize, Value>,
    tau_vec: Arc<Vec<Complex64>>,
    xi_vec: Arc<Vec<Complex64>>,
}

impl FreqTable {
    pub fn new(expr: &Expr, z: f64, eps: f64, freqs: Vec<(f64, f64)>) -> Self {
        let mut flags = BTreeMap::new();
        classify(expr, &mut flags);
        let mut uses = BTreeMap::new();
        count_uses(expr, &mut uses);
        let tau_vec = Arc::new(freqs.iter().map(|f| Complex64::new(f.0, 0.0)).collect());
        let xi_vec = Arc::new(freqs.iter().map(|f| Complex64::new(f.1, 0.0)).collect());
        FreqTable {
            expr: expr.clone(),
            z,
            eps,
            freqs: Arc::new(freqs),
            flags,
            uses,
            shared: BTreeMap::new(),
            tau_vec,
            xi_vec,
        }
    }

    pub fn freq_count(&self) -> usize {
        self.freqs.len()
    }

    /// Symbol values over all frequencies at lateral position `x`.
    pub fn column(&mut self, x: f64) -> Vec<Complex64> {
        let expr = self.expr.clone();
        let mut local: BTreeMap<usize, (Value, usize)> = BTreeMap::new();
        let v = self.eval_node(&expr, x, &mut local);
        match v {
            Value::Scalar(c) => alloc::vec![c; self.freqs.len()],
            Value::Vector(v) => match Arc::try_unwrap(v) {
                Ok(owned) => owned,
                Err(shared) => shared.as_ref().clone(),
            },
        }
    }

    fn eval_node(
        &mut self,
        e: &Expr,
        x: f64,
        local: &mut BTreeMap<usize, (Value, usize)>,
    ) -> Value {
        let key = e.ptr_id();
        let (dep_space, _dep_freq) = *self.flags.get(&key).unwrap_or(&(true, true));
        if !dep_space {
            if let Some(v) = self.shared.get(&key) {
                return v.clone();
            }
        } else if let Some(entry) = local.get_mut(&key) {
            let v = entry.0.clone();
            entry.1 -= 1;
            if entry.1 == 0 {
                local.remove(&key);
            }
            return v;
        }
        let v = self.compute(e, x, local);
        if !dep_space {
            self.shared.insert(key, v.clone());
        } else {
            let total = *self.uses.get(&key).unwrap_or(&1);
            if total > 1 {
                local.insert(key, (v.clone(), total - 1));
            }
        }
        v
    }

    fn compute(
        &mut self,
        e: &Expr,
        x: f64,
        local: &mut BTreeMap<usize, (Value, usize)>,
    ) -> Value {
        let n = self.freqs.len();
        match &e.0.kind {
            Kind::Const(c) => Value::Scalar(*c),
            Kind::Coord(v) => match v {
                Var::X(0) => Value::Scalar(Complex64::new(x, 0.0)),
                Var::X(_) => Value::Scalar(C_ZERO),
                Var::Z => Value::Scalar(Complex64::new(self.z, 0.0)),
                Var::Tau => Value::Vector(self.tau_vec.clone()),
                Var::Xi(0) => Value::Vector(self.xi_vec.clone()),
                Var::Xi(_) => Value::Scalar(C_ZERO),
            },
            Kind::Net(nl) => Value::Scalar(Complex64::new(nl.value_at(self.eps), 0.0)),
            Kind::Field(f) => Value::Scalar(Complex64::new(
                f.fam.eval(self.eps, x, self.z, f.dx as usize, f.dz as usize),
                0.0,
            )),
            Kind::Add(ts) => {
                let vals: Vec<Value> = ts.iter().map(|t| self.eval_node(t, x, local)).collect();
                if vals.iter().all(|v| matches!(v, Value::Scalar(_))) {
                    let mut acc = C_ZERO;
                    for v in &vals {
                        acc += v.at(0);
                    }
                    return Value::Scalar(acc);
                }
                let mut out = alloc::vec![C_ZERO; n];
                for v in &vals {
                    match v {
                        Value::Scalar(c) => out.iter_mut().for_each(|o| *o += c),
                        Value::Vector(w) => {
                            out.iter_mut().zip(w.iter()).for_each(|(o, c)| *o += c)
                        }
                    }
                }
                Value::Vector(Arc::new(out))
            }
            Kind::Mul(ts) => {
                let vals: Vec<Value> = ts.iter().map(|t| self.eval_node(t, x, local)).collect();
                if vals.iter().all(|v| matches!(v, Value::Scalar(_))) {
                    return Value::Scalar(product(vals.iter().map(|v| v.at(0))));
                }
                let mut out = alloc::vec![C_ZERO; n];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = product(vals.iter().map(|v| v.at(i)));
                }
                Value::Vector(Arc::new(out))
            }
            Kind::Pow(b, p) => {
                let v = self.eval_node(b, x, local);
                self.map(v, |c| crate::symbol::expr::cpowf(c, *p))
            }
            Kind::Profile(kind, ord, a) => {
                let v = self.eval_node(a, x, local);
                let (kind, ord) = (*kind, *ord);
                self.map(v, |c| Complex64::new(profile_eval(kind, ord, c.re), 0.0))
            }
        }
    }

    fn map(&self, v: Value, f: impl Fn(Complex64) -> Complex64) -> Value {
        match v {
            Value::Scalar(c) => Value::Scalar(f(c)),
            Value::Vector(w) => Value::Vector(Arc::new(w.iter().map(|&c| f(c)).collect())),
        }
    }
}

fn profile_eval(kind: ProfileKind, ord: u8, s: f64) -> f64 {
    kind.eval(ord, s)
}

fn product(vals: impl Iterator<Item = Complex64>) -> Complex64 {
    let mut acc = C_ONE;
    let mut zero = false;
    for v in vals {
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

fn classify(e: &Expr, flags: &mut BTreeMap<usize, (bool, bool)>) -> (bool, bool) {
    let key = e.ptr_id();
    if let Some(f) = flags.get(&key) {
        return *f;
    }
    let f = match &e.0.kind {
        Kind::Const(_) | Kind::Net(_) => (false, false),
        Kind::Coord(v) => (v.is_space(), v.is_freq()),
        Kind::Field(_) => (true, false),
        Kind::Add(ts) | Kind::Mul(ts) => {
            let mut acc = (false, false);
            for t in ts {
                let g = classify(t, flags);
                acc = (acc.0 || g.0, acc.1 || g.1);
            }
            acc
        }
        Kind::Pow(b, _) => classify(b, flags),
        Kind::Profile(_, _, a) => classify(a, flags),
    };
    flags.insert(key, f);
    f
}

fn count_uses(e: &Expr, uses: &mut BTreeMap<usize, usize>) {
    use alloc::collections::BTreeSet;
    fn walk(e: &Expr, uses: &mut BTreeMap<usize, usize>, expanded: &mut BTreeSet<usize>) {
        let children: Vec<Expr> = match &e.0.kind {
            Kind::Add(ts) | Kind::Mul(ts) => ts.clone(),
            Kind::Pow(b, _) => alloc::vec![b.clone()],
            Kind::Profile(_, _, a) => alloc::vec![a.clone()],
            _ => Vec::new(),
        };
        for c in &children {
            *uses.entry(c.ptr_id()).or_insert(0) += 1;
        }
        if expanded.insert(e.ptr_id()) {
            for c in &children {
                walk(c, uses, expanded);
            }
        }
    }
    let mut expanded = BTreeSet::new();
    *uses.entry(e.ptr_id()).or_insert(0) += 1;
    walk(e, uses, &mut expanded);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::expr::PhasePoint;

    #[test]
    fn table_matches_pointwise_eval() {
        // (1 + sin x) * <xi>^2 + tau
        let bracket2 = Expr::add2(
            Expr::one(),
            Expr::add2(
                Expr::mul2(Expr::xi(), Expr::xi()),
                Expr::mul2(Expr::tau(), Expr::tau()),
            ),
        );
        let e = Expr::add2(
            Expr::mul2(
                Expr::add2(Expr::one(), Expr::profile(ProfileKind::Sin, Expr::x())),
                bracket2,
            ),
            Expr::tau(),
        );
        let freqs: Vec<(f64, f64)> = (0..16)
            .flat_map(|i| (0..8).map(move |j| (i as f64 - 8.0, j as f64 - 4.0)))
            .collect();
        let mut table = FreqTable::new(&e, 0.3, 1e-4, freqs.clone());
        for &x in &[-1.0, 0.0, 0.5] {
            let col = table.column(x);
            for (k, &(tau, xi)) in freqs.iter().enumerate() {
                let p = PhasePoint::new(x, 0.3, tau, xi);
                let direct = e.eval(&p, 1e-4);
                assert!((col[k] - direct).norm() < 1e-12);
            }
        }
    }
}
