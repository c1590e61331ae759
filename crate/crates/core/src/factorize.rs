//! Factorization of the regularized acoustic wave operator on
//! strict-hyperbolicity cones: parametrix recursion, the two-root
//! factorization L = L1 (1/ρ) L2 + R, explicit zeroth-order references,
//! self-adjoint square roots, the one-way operators B± and the damping term.

use crate::calculus::{
    adjoint_expansion, compose, compose_expansions, quantize_apply, GridField, TruncatedExpansion,
};
use crate::error::{invalid, Error, Result};
use crate::microlocal::{
    build_chi, ellipticity_probe, AngleChain, CStar, EllipticityReport, EllipticityVerdict,
    PhaseRegion,
};
use crate::num::Rng;
use crate::scalenets::{regularize, EpsGrid, EpsNet, HolderModel, Mollifier, NetClass};
use crate::symbol::{
    AxisRange, Expr, FieldFamily, FreqIndex, GeneralizedSymbol, PhasePoint, ProfileKind,
    SampleBox, SmoothField, SpaceIndex, Var,
};
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Float;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const NEG_I: Complex64 = Complex64 { re: 0.0, im: -1.0 };

// ---------------------------------------------------------------------------
// Wave model
// ---------------------------------------------------------------------------

/// Regularized acoustic medium: Hölder models for density and speed plus the
/// mollified ε-families 1/ρ_ε and 1/c_ε, sharing one lsc net.
#[derive(Debug, Clone)]
pub struct WaveModel {
    pub rho_model: HolderModel,
    pub speed_model: HolderModel,
    pub omega: EpsNet,
    pub grid: EpsGrid,
    /// Largest grid ε below which strong positivity of both families holds.
    pub positivity_threshold: Option<f64>,
    inv_rho: Expr,
    inv_c: Expr,
    a: Expr,
}

impl WaveModel {
    /// Mollify 1/ρ* and 1/c* at every grid ε.
    pub fn new(
        rho_model: HolderModel,
        speed_model: HolderModel,
        omega: &EpsNet,
        phi: &Mollifier,
    ) -> Result<Self> {
        if omega.class != NetClass::Lsc {
            return Err(invalid("the shared regularization net must be lsc"));
        }
        let grid = omega.grid.clone();
        let inv_rho_star = rho_model.map(|v| 1.0 / v)?;
        let inv_c_star = speed_model.map(|v| 1.0 / v)?;
        let build = |m: &HolderModel| -> Result<(Arc<FieldFamily>, f64)> {
            let mut slices = Vec::with_capacity(grid.len());
            let mut min_val = f64::INFINITY;
            for &e in grid.values() {
                let f = regularize(m, omega, phi, e)?;
                min_val = min_val.min(f.data.iter().cloned().fold(f64::INFINITY, f64::min));
                slices.push(SmoothField::from_samples(m.nx, m.nz, &f.data)?);
            }
            Ok((Arc::new(FieldFamily::per_eps(grid.values().into(), slices)?), min_val))
        };
        let (inv_rho_fam, _) = build(&inv_rho_star)?;
        let (inv_c_fam, _) = build(&inv_c_star)?;
        // strong positivity threshold: both mollified families above half
        // their lower bounds from this grid ε on
        let mut positivity_threshold = None;
        'outer: for (i, &e) in grid.values().iter().enumerate() {
            for &e2 in &grid.values()[i..] {
                for (fam, m) in [(&inv_rho_fam, &inv_rho_star), (&inv_c_fam, &inv_c_star)] {
                    let mut min_val = f64::INFINITY;
                    if let Some(slice) = fam.slice(e2) {
                        for ix in 0..m.nx {
                            for iz in 0..m.nz {
                                let x = -crate::num::PI
                                    + crate::num::TAU * ix as f64 / m.nx as f64;
                                let z = -crate::num::PI
                                    + crate::num::TAU * iz as f64 / m.nz as f64;
                                min_val = min_val.min(slice.eval(x, z, 0, 0));
                            }
                        }
                    }
                    if min_val < m.lower / 2.0 {
                        continue 'outer;
                    }
                }
            }
            positivity_threshold = Some(e);
            break;
        }
        let inv_rho = Expr::field("inv_rho", inv_rho_fam);
        let inv_c = Expr::field("inv_c", inv_c_fam);
        // a = τ²/c_ε² - |ξ|², the principal symbol of ρ A_ρ
        let a = Expr::sub(
            Expr::mul(vec![
                Expr::tau(),
                Expr::tau(),
                Expr::mul2(inv_c.clone(), inv_c.clone()),
            ]),
            Expr::mul2(Expr::xi(), Expr::xi()),
        );
        Ok(WaveModel {
            rho_model,
            speed_model,
            omega: omega.clone(),
            grid,
            positivity_threshold,
            inv_rho,
            inv_c,
            a,
        })
    }

    /// Constant-coefficient medium (handy baseline).
    pub fn constant(c0: f64, rho0: f64, omega: &EpsNet, phi: &Mollifier) -> Result<Self> {
        WaveModel::new(
            HolderModel::constant(rho0),
            HolderModel::constant(c0),
            omega,
            phi,
        )
    }

    /// Laterally varying speed c(x), unit density, depth independent.
    pub fn lateral_speed(
        nx: usize,
        speed: impl Fn(f64) -> f64,
        omega: &EpsNet,
        phi: &Mollifier,
    ) -> Result<Self> {
        WaveModel::new(
            HolderModel::constant(1.0),
            HolderModel::from_fn(nx, 1, 0.5, |x, _| speed(x))?,
            omega,
            phi,
        )
    }

    pub fn inv_rho_expr(&self) -> Expr {
        self.inv_rho.clone()
    }

    pub fn rho_expr(&self) -> Expr {
        Expr::recip(self.inv_rho.clone())
    }

    pub fn inv_c_expr(&self) -> Expr {
        self.inv_c.clone()
    }

    pub fn c_expr(&self) -> Expr {
        Expr::recip(self.inv_c.clone())
    }

    /// a_ε = τ²/c_ε² - |ξ|² (order 2).
    pub fn a_expr(&self) -> Expr {
        self.a.clone()
    }

    pub fn a_symbol(&self) -> GeneralizedSymbol {
        GeneralizedSymbol::new(self.a.clone(), 2.0)
    }

    /// Principal symbol of A_ρ: a_ρ = (1/ρ_ε) a_ε.
    pub fn a_rho_expr(&self) -> Expr {
        Expr::mul2(self.inv_rho.clone(), self.a.clone())
    }

    /// Full symbol of A_ρ as a two-term expansion:
    /// a_ρ + i Σ_j ∂_{x_j}(1/ρ_ε) ξ_j.
    pub fn a_rho_full(&self) -> TruncatedExpansion {
        let principal = GeneralizedSymbol::new(self.a_rho_expr(), 2.0);
        let drift = Expr::mul(vec![
            Expr::constant(I),
            self.inv_rho.deriv(Var::X(0)),
            Expr::xi(),
        ]);
        let mut terms = vec![principal];
        if !drift.is_zero() {
            terms.push(GeneralizedSymbol::new(drift, 1.0));
        }
        TruncatedExpansion::new(terms, 2).expect("orders 2 > 1")
    }

    /// Reference c* for cone geometry.
    pub fn cstar(&self) -> CStar {
        if self.speed_model.lower == self.speed_model.upper {
            CStar::Const(self.speed_model.lower)
        } else {
            CStar::Model(Arc::new(self.speed_model.clone()))
        }
    }

    /// The directional cutoff χ_ε for this medium.
    pub fn chi(&self, angles: &AngleChain) -> Result<GeneralizedSymbol> {
        build_chi(angles, self.c_expr())
    }
}

/// Default probe box over the cone for ellipticity checks.
pub fn cone_probe_box() -> SampleBox {
    SampleBox {
        x: AxisRange::span(-3.0, 3.0, 9),
        z: AxisRange::fixed(0.0),
        tau: AxisRange::span(-1.0, 1.0, 9),
        xi: AxisRange::span(-1.0, 1.0, 17),
        constraint: None,
    }
}

// ---------------------------------------------------------------------------
// Principal root
// ---------------------------------------------------------------------------

/// √a on the cone, continued outside as the χ-damped extension χ_ε √a_ε
/// (zero outside I'_{θ2}). Fails when a is not micro-elliptic on the cone.
pub fn principal_root(
    model: &WaveModel,
    angles: &AngleChain,
) -> Result<(GeneralizedSymbol, EllipticityReport)> {
    let region = PhaseRegion::cone(angles.theta1, model.cstar())?;
    let report = ellipticity_probe(
        &model.a_symbol(),
        &region,
        &cone_probe_box(),
        2.0,
        &model.grid,
    )?;
    if report.verdict != EllipticityVerdict::Elliptic {
        return Err(Error::Ellipticity(format!(
            "wave symbol is not lsc micro-elliptic on the {:.1}-degree cone (s-class {})",
            angles.theta1 * 360.0 / crate::num::TAU,
            report.s_class.as_str()
        )));
    }
    let chi = model.chi(angles)?;
    let b = Expr::mul2(chi.expr, Expr::sqrt(model.a_expr()));
    Ok((GeneralizedSymbol::new(b, 1.0), report))
}

// ---------------------------------------------------------------------------
// Parametrix
// ---------------------------------------------------------------------------

/// Parametrix of one elliptic symbol: p_0 = a^{-1} ψ(ζ/r_ε), then
/// p_{-m-k} = -{Σ_{|γ|+j=k, j<k} ((-i)^{|γ|}/γ!) ∂_x^γ a ∂_ξ^γ p_{-m-j}} a^{-1} ψ(ζ/r_ε).
pub fn parametrix(
    a: &GeneralizedSymbol,
    n: usize,
    report: &EllipticityReport,
) -> Result<TruncatedExpansion> {
    if report.verdict != EllipticityVerdict::Elliptic {
        return Err(Error::Ellipticity("parametrix requires an elliptic symbol".into()));
    }
    if (a.deriv_budget as usize) < n {
        return Err(Error::BudgetExceeded { requested: n, budget: a.deriv_budget as usize });
    }
    let psi = excision_mask(&report.threshold_radius);
    let a_inv = Expr::recip(a.expr.clone());
    let mut terms: Vec<GeneralizedSymbol> = Vec::with_capacity(n);
    terms.push(GeneralizedSymbol {
        expr: Expr::mul2(a_inv.clone(), psi.clone()),
        order: -a.order,
        ..a.clone()
    });
    for k in 1..n {
        let mut sum = Vec::new();
        for j in 0..k {
            let g = k - j;
            for gamma in lateral_multi(a.nx, g) {
                let da = a.deriv(FreqIndex::default(), SpaceIndex { x: gamma, z: 0 })?;
                let dp = terms[j]
                    .deriv(FreqIndex { tau: 0, xi: gamma }, SpaceIndex::default())?;
                if da.expr.is_zero() || dp.expr.is_zero() {
                    continue;
                }
                let c = pow_neg_i(g) / multi_factorial(gamma);
                sum.push(Expr::mul(vec![Expr::constant(c), da.expr, dp.expr]));
            }
        }
        let brace = Expr::add(sum);
        let expr = Expr::mul(vec![Expr::constant(-1.0), brace, a_inv.clone(), psi.clone()]);
        terms.push(GeneralizedSymbol { expr, order: -a.order - k as f64, ..a.clone() });
    }
    terms.retain(|t| !t.expr.is_zero());
    TruncatedExpansion::new(terms, n)
}

/// ψ(|(τ,ξ)|/r_ε): 0 below r_ε, 1 beyond 2 r_ε.
pub fn excision_mask(r_net: &EpsNet) -> Expr {
    Expr::profile(
        ProfileKind::StepUp(1.0, 2.0),
        Expr::mul2(
            Expr::recip(Expr::net("r_eps", r_net)),
            Expr::freq_norm_full(),
        ),
    )
}

/// Invert a truncated expansion (q # x = ψ modulo decreasing orders); the
/// generalization of [`parametrix`] used for the Q/P block parametrixes.
/// Term order offsets from the principal must be (near) integral.
pub fn invert_expansion(
    x: &TruncatedExpansion,
    n: usize,
    r_net: &EpsNet,
) -> Result<TruncatedExpansion> {
    let x0 = x
        .principal()
        .ok_or_else(|| invalid("cannot invert an empty expansion"))?;
    let m0 = x0.order;
    let psi = excision_mask(r_net);
    let x0_inv = Expr::recip(x0.expr.clone());
    // level l term of x (order m0 - l)
    let mut levels: Vec<Option<&GeneralizedSymbol>> = vec![None; n + 1];
    for t in &x.terms {
        let off = m0 - t.order;
        let l = Float::round(off) as i64;
        if (off - l as f64).abs() > 1e-9 {
            return Err(invalid("expansion inversion needs integral order offsets"));
        }
        if l >= 0 && (l as usize) < levels.len() {
            levels[l as usize] = Some(t);
        }
    }
    let mut q: Vec<GeneralizedSymbol> = Vec::with_capacity(n);
    q.push(GeneralizedSymbol {
        expr: Expr::mul2(x0_inv.clone(), psi.clone()),
        order: -m0,
        ..x0.clone()
    });
    for k in 1..n {
        let mut sum = Vec::new();
        // bucket -k of q # x: j + l + |γ| = k with j < k
        for j in 0..k {
            for l in 0..=(k - j) {
                let g = k - j - l;
                let Some(xl) = levels[l] else { continue };
                for gamma in lateral_multi(x0.nx, g) {
                    let dq = q[j].deriv(FreqIndex { tau: 0, xi: gamma }, SpaceIndex::default())?;
                    let dx = xl.deriv(FreqIndex::default(), SpaceIndex { x: gamma, z: 0 })?;
                    if dq.expr.is_zero() || dx.expr.is_zero() {
                        continue;
                    }
                    // skip the defining term q_k x_0 itself
                    if j == k {
                        continue;
                    }
                    let c = pow_neg_i(g) / multi_factorial(gamma);
                    sum.push(Expr::mul(vec![Expr::constant(c), dq.expr, dx.expr]));
                }
            }
        }
        let brace = Expr::add(sum);
        let expr = Expr::mul(vec![Expr::constant(-1.0), brace, x0_inv.clone(), psi.clone()]);
        q.push(GeneralizedSymbol { expr, order: -m0 - k as f64, ..x0.clone() });
    }
    q.retain(|t| !t.expr.is_zero());
    TruncatedExpansion::new(q, n)
}

fn lateral_multi(nx: u8, total: usize) -> Vec<[u8; 2]> {
    match nx {
        1 => vec![[total as u8, 0]],
        _ => (0..=total).map(|k| [(total - k) as u8, k as u8]).collect(),
    }
}

fn multi_factorial(alpha: [u8; 2]) -> f64 {
    let f = |n: u8| (1..=n as u64).product::<u64>() as f64;
    f(alpha[0]) * f(alpha[1])
}

fn pow_neg_i(j: usize) -> Complex64 {
    match j % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

// ---------------------------------------------------------------------------
// The 2×2 lower-order system
// ---------------------------------------------------------------------------

/// Solve the pair  -γ1 = b1 (1/ρ) + (1/ρ) b2,
///                 -γ2 = b1 (1/ρ) a2 + a1 (1/ρ) b2
/// for (b1, b2) via the explicit 2×2 inverse
/// (b1, b2) = -ρ (a1-a2)^{-1} [[a1, -1], [-a2, 1]] (γ1, γ2).
pub fn solve_lot_system(
    gamma1: &Expr,
    gamma2: &Expr,
    a1_principal: &Expr,
    a2_principal: &Expr,
    rho: &Expr,
    separation_probes: &[(PhasePoint, f64)],
) -> Result<(Expr, Expr)> {
    // separation check |a1 - a2| >= C |(τ,ξ)| on supplied probes
    let diff = Expr::sub(a1_principal.clone(), a2_principal.clone());
    for (p, eps) in separation_probes {
        let v = diff.eval(p, *eps).norm();
        let scale = p.freq_norm();
        if scale > 0.0 && v < 1e-8 * scale {
            return Err(Error::DegenerateSystem(format!(
                "characteristic roots coincide near (tau, xi) = ({}, {})",
                p.tau, p.xi[0]
            )));
        }
    }
    let inv = Expr::recip(diff);
    let b1 = Expr::mul(vec![
        Expr::constant(-1.0),
        rho.clone(),
        Expr::sub(
            Expr::mul2(a1_principal.clone(), gamma1.clone()),
            gamma2.clone(),
        ),
        inv.clone(),
    ]);
    let b2 = Expr::mul(vec![
        Expr::constant(-1.0),
        rho.clone(),
        Expr::sub(
            gamma2.clone(),
            Expr::mul2(a2_principal.clone(), gamma1.clone()),
        ),
        inv,
    ]);
    Ok((b1, b2))
}

// ---------------------------------------------------------------------------
// Factorization recursion
// ---------------------------------------------------------------------------

/// Choice of principal branch for the factorization roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// principal of A1 is -i√a (and +i√a for A2)
    RootMinus,
    /// principal of A1 is +i√a
    RootPlus,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::RootMinus => "root-minus",
            Branch::RootPlus => "root-plus",
        }
    }
}

/// Output of [`factorize_l`]: truncated one-way symbols, residual symbols,
/// and the diagnostics needed to verify the construction.
#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub a1: TruncatedExpansion,
    pub a2: TruncatedExpansion,
    /// Residual symbols Γ_j^{(N)} (valid as order j-N on the cone).
    pub gamma1: GeneralizedSymbol,
    pub gamma2: GeneralizedSymbol,
    pub truncation: usize,
    pub branch: Branch,
    pub angles: AngleChain,
    pub ellipticity: EllipticityReport,
    /// Unmasked recursion terms (exact on the cone, singular outside).
    pub a1_raw: TruncatedExpansion,
    pub a2_raw: TruncatedExpansion,
}

/// Iterate the factorization recursion: starting from the principal roots
/// ∓i√a, each step extracts the top-order residual pair, solves the 2×2
/// lower-order system, and appends the corrections. Output symbols are
/// continued off the cone as χ-damped extensions term by term.
pub fn factorize_l(
    model: &WaveModel,
    angles: &AngleChain,
    n: usize,
    branch: Branch,
) -> Result<FactorizationResult> {
    if n == 0 {
        return Err(invalid("truncation must be at least 1"));
    }
    let (_, report) = principal_root(model, angles)?;
    let window = n + 2;
    let b_raw = Expr::sqrt(model.a_expr());
    let (s1, s2) = match branch {
        Branch::RootMinus => (NEG_I, I),
        Branch::RootPlus => (I, NEG_I),
    };
    let b1_0 = Expr::mul2(Expr::constant(s1), b_raw.clone());
    let b2_0 = Expr::mul2(Expr::constant(s2), b_raw.clone());
    let sym1 = GeneralizedSymbol::new(b1_0.clone(), 1.0);
    let sym2 = GeneralizedSymbol::new(b2_0.clone(), 1.0);
    let mut a1 = TruncatedExpansion::single(sym1);
    let mut a2 = TruncatedExpansion::single(sym2);
    let inv_rho = TruncatedExpansion::single(GeneralizedSymbol::new(model.inv_rho_expr(), 0.0));
    let rho = model.rho_expr();

    // separation probes inside the inner cone
    let cs = model.cstar();
    let mut probes = Vec::new();
    let ratio = 0.8 * angles.theta1.sin();
    for &x in &[-2.0, 0.0, 1.5] {
        let c = cs.value(x, 0.0);
        for &r in &[4.0, 64.0] {
            probes.push((PhasePoint::new(x, 0.0, r, r * ratio / c), model.grid.values()[2]));
        }
    }

    // Γ^{(1)}
    let mut g1 = compose_expansions(&a1, &inv_rho, window)?
        .add(&compose_expansions(&inv_rho, &a2, window)?);
    let ir_a2 = compose_expansions(&inv_rho, &a2, window)?;
    let mut g2 = dz_expansion(&ir_a2)
        .add(&compose_expansions(&a1, &ir_a2, window)?)
        .add(&model.a_rho_full().scale(Complex64::new(-1.0, 0.0)));

    for k in 1..n {
        let gamma1 = g1.sum_from_order(1.0 - k as f64);
        let gamma2 = g2.sum_from_order(2.0 - k as f64);
        let (b1k, b2k) = solve_lot_system(&gamma1, &gamma2, &b1_0, &b2_0, &rho, &probes)?;
        let t1 = GeneralizedSymbol::new(b1k, 1.0 - k as f64);
        let t2 = GeneralizedSymbol::new(b2k, 1.0 - k as f64);
        let e1 = TruncatedExpansion::single(t1.clone());
        let e2 = TruncatedExpansion::single(t2.clone());
        // error updates before appending (the update formula uses A^{(k)})
        let ir_b2 = compose_expansions(&inv_rho, &e2, window)?;
        let ir_a2_now = compose_expansions(&inv_rho, &a2, window)?;
        g1 = g1
            .add(&compose_expansions(&e1, &inv_rho, window)?)
            .add(&ir_b2);
        g2 = g2
            .add(&dz_expansion(&ir_b2))
            .add(&compose_expansions(&e1, &ir_a2_now, window)?)
            .add(&compose_expansions(&a1, &ir_b2, window)?)
            .add(&compose_expansions(&e1, &ir_b2, window)?);
        a1 = a1.add(&e1);
        a2 = a2.add(&e2);
    }

    let gamma1 = GeneralizedSymbol::new(g1.sum_expr(), 1.0 - n as f64);
    let gamma2 = GeneralizedSymbol::new(g2.sum_expr(), 2.0 - n as f64);

    // χ-damped continuation of every term
    let chi = model.chi(angles)?.expr;
    let mask = |e: &TruncatedExpansion| -> Result<TruncatedExpansion> {
        let terms = e
            .terms
            .iter()
            .map(|t| GeneralizedSymbol {
                expr: Expr::mul2(chi.clone(), t.expr.clone()),
                ..t.clone()
            })
            .collect();
        TruncatedExpansion::new(terms, n)
    };
    let a1_masked = mask(&a1)?;
    let a2_masked = mask(&a2)?;
    Ok(FactorizationResult {
        a1: a1_masked,
        a2: a2_masked,
        gamma1,
        gamma2,
        truncation: n,
        branch,
        angles: *angles,
        ellipticity: report,
        a1_raw: a1,
        a2_raw: a2,
    })
}

/// Term-wise ∂_z of an expansion.
fn dz_expansion(e: &TruncatedExpansion) -> TruncatedExpansion {
    let terms: Vec<GeneralizedSymbol> = e
        .terms
        .iter()
        .filter_map(|t| {
            let d = t.expr.deriv(Var::Z);
            if d.is_zero() {
                None
            } else {
                Some(GeneralizedSymbol { expr: d, ..t.clone() })
            }
        })
        .collect();
    TruncatedExpansion { terms, truncation: e.truncation, excision_radii: Vec::new() }
}

// ---------------------------------------------------------------------------
// Zeroth-order references
// ---------------------------------------------------------------------------

/// Closed-form order-(1, 0) parts of the two factorization roots:
/// a11 = -i b + (1/2b) Σ ∂_ξ b ∂_x b - (1/4)(∂_z a_ρ / a_ρ - ∂_z ρ / ρ)
///       + (1/2)(1/(ρ b)) Σ ξ ∂_x ρ,
/// a12 with all three correction signs flipped except the ∂_z term.
/// Valid on the cone (no χ continuation).
pub fn zeroth_order_reference(model: &WaveModel) -> (GeneralizedSymbol, GeneralizedSymbol) {
    let b = Expr::sqrt(model.a_expr());
    let rho = model.rho_expr();
    let a_rho = model.a_rho_expr();
    let s = Expr::mul2(b.deriv(Var::Xi(0)), b.deriv(Var::X(0)));
    let d = Expr::sub(
        Expr::div(a_rho.deriv(Var::Z), a_rho.clone()),
        Expr::div(rho.deriv(Var::Z), rho.clone()),
    );
    let p = Expr::mul2(Expr::xi(), rho.deriv(Var::X(0)));
    let half_inv_b = Expr::mul2(Expr::constant(0.5), Expr::recip(b.clone()));
    let term_s = Expr::mul2(half_inv_b.clone(), s);
    let term_d = Expr::mul2(Expr::constant(-0.25), d);
    let term_p = Expr::mul(vec![half_inv_b, Expr::recip(rho), p]);
    let a11 = Expr::add(vec![
        Expr::mul2(Expr::constant(NEG_I), b.clone()),
        term_s.clone(),
        term_d.clone(),
        term_p.clone(),
    ]);
    let a12 = Expr::add(vec![
        Expr::mul2(Expr::constant(I), b),
        Expr::neg(term_s),
        term_d,
        Expr::neg(term_p),
    ]);
    (
        GeneralizedSymbol::new(a11, 1.0),
        GeneralizedSymbol::new(a12, 1.0),
    )
}

// ---------------------------------------------------------------------------
// Self-adjoint square root
// ---------------------------------------------------------------------------

/// Symmetrize an expression of declared order: (e + e*)/2.
fn symmetrize(e: &Expr, order: f64, n: usize) -> Result<Expr> {
    let sym = GeneralizedSymbol::new(e.clone(), order);
    let adj = adjoint_expansion(&TruncatedExpansion::single(sym), n)?;
    Ok(Expr::mul2(
        Expr::constant(0.5),
        Expr::add2(e.clone(), adj.sum_expr()),
    ))
}

/// Self-adjoint square root: X with X # X = T modulo decreasing orders,
/// X^{(0)} = sym(√t_0), X^{(k+1)} = sym(-(1/(2√t_0)) R^{(k)}) with
/// R^{(k)} = (X # X - T) after k corrections. Every term is symmetrized.
pub fn selfadjoint_sqrt(t: &TruncatedExpansion, n: usize) -> Result<TruncatedExpansion> {
    let t0 = t
        .principal()
        .ok_or_else(|| invalid("square root needs a nonempty expansion"))?;
    // positivity probe of the principal on a frequency box
    let probe = SampleBox::freq_only(
        AxisRange::span(2.0, 32.0, 8),
        AxisRange::span(-8.0, 8.0, 9),
    );
    let eps_probe = t0
        .expr
        .validate_eps(1e-4)
        .map(|_| 1e-4)
        .unwrap_or(1.0);
    for p in probe.points() {
        let v = t0.expr.eval(&p, eps_probe);
        if v.im.abs() > 1e-8 * v.re.abs().max(1.0) || v.re < -1e-12 {
            return Err(invalid(
                "square root requires a real nonnegative principal symbol",
            ));
        }
    }
    let step = t0.rho - t0.delta;
    let root0 = Expr::sqrt(t0.expr.clone());
    let x0 = symmetrize(&root0, t0.order / 2.0, n)?;
    let mut terms = vec![GeneralizedSymbol {
        expr: x0,
        order: t0.order / 2.0,
        ..t0.clone()
    }];
    let damp = Expr::mul2(Expr::constant(-0.5), Expr::recip(root0));
    for k in 0..n.saturating_sub(1) {
        let x = TruncatedExpansion::new(terms.clone(), n)?;
        let xx = compose_expansions(&x, &x, n + 1)?;
        let r = Expr::sub(xx.sum_expr(), t.sum_expr());
        if r.is_zero() {
            break;
        }
        let order = t0.order / 2.0 - (k + 1) as f64 * step;
        let corr = symmetrize(&Expr::mul2(damp.clone(), r), order, n)?;
        if corr.is_zero() {
            break;
        }
        terms.push(GeneralizedSymbol { expr: corr, order, ..t0.clone() });
    }
    TruncatedExpansion::new(terms, n)
}

// ---------------------------------------------------------------------------
// One-way operators
// ---------------------------------------------------------------------------

/// One-way operator package: the symbols of B±, the Q/P block expansions,
/// the optional damping symbol, and the self-adjointness flag.
#[derive(Debug, Clone)]
pub struct OneWayOperators {
    pub b_plus: TruncatedExpansion,
    pub b_minus: TruncatedExpansion,
    /// Q blocks row major: q11, q12, q21, q22.
    pub q_blocks: [TruncatedExpansion; 4],
    /// P blocks row major.
    pub p_blocks: [TruncatedExpansion; 4],
    pub damping: Option<GeneralizedSymbol>,
    pub selfadjoint: bool,
}

/// Elliptic continuation of a_ρ across the cone boundary:
/// (1/ρ)(χ a + (1-χ)⟨(τ,ξ)⟩²); equals a_ρ where χ = 1.
fn extended_a_rho(model: &WaveModel, chi: &Expr) -> Expr {
    let bracket2 = Expr::add(vec![
        Expr::one(),
        Expr::mul2(Expr::tau(), Expr::tau()),
        Expr::mul2(Expr::xi(), Expr::xi()),
    ]);
    Expr::mul2(
        model.inv_rho_expr(),
        Expr::add2(
            Expr::mul2(chi.clone(), model.a_expr()),
            Expr::mul2(Expr::sub(Expr::one(), chi.clone()), bracket2),
        ),
    )
}

/// Elliptic order-1 continuation term (1-χ)·2⟨(τ,ξ)⟩/ρ added off the cone.
fn cone_continuation_term(model: &WaveModel, chi: &Expr) -> GeneralizedSymbol {
    let bracket = Expr::sqrt(Expr::add(vec![
        Expr::one(),
        Expr::mul2(Expr::tau(), Expr::tau()),
        Expr::mul2(Expr::xi(), Expr::xi()),
    ]));
    GeneralizedSymbol::new(
        Expr::mul(vec![
            Expr::constant(2.0),
            Expr::sub(Expr::one(), chi.clone()),
            bracket,
            model.inv_rho_expr(),
        ]),
        1.0,
    )
}

/// Build the one-way operators B± from the two branch factorizations.
///
/// Non-self-adjoint path: P_12^{-1} = P_22^{-1} = Op(√2 ã_ρ^{1/4} ρ^{-1/4})
/// with ã_ρ the elliptic continuation of a_ρ. Self-adjoint path: the P
/// blocks are self-adjoint square roots of ±i(A_1k (1/ρ) - (1/ρ) A_1k*),
/// continued elliptically off the cone, and the resulting b± are
/// symmetrized term by term.
pub fn build_bpm(
    model: &WaveModel,
    fact_minus: &FactorizationResult,
    fact_plus: &FactorizationResult,
    selfadjoint: bool,
) -> Result<OneWayOperators> {
    if fact_minus.truncation != fact_plus.truncation {
        return Err(invalid("both factorizations must share one truncation"));
    }
    if fact_minus.angles != fact_plus.angles {
        return Err(invalid("both factorizations must live on one cone"));
    }
    if fact_minus.branch != Branch::RootMinus || fact_plus.branch != Branch::RootPlus {
        return Err(invalid("build_bpm expects (root-minus, root-plus) factorizations"));
    }
    let n = fact_minus.truncation.max(2);
    let chi = model.chi(&fact_minus.angles)?.expr;
    let inv_rho = TruncatedExpansion::single(GeneralizedSymbol::new(model.inv_rho_expr(), 0.0));
    let ones = EpsNet::constant(model.grid.clone(), 1.0)?;

    let a11 = &fact_minus.a1;
    let a12 = &fact_plus.a1;

    let (p12_inv, p22_inv);
    if selfadjoint {
        // T± = ±i (A_1k (1/ρ) - (1/ρ) A_1k*), continued elliptically
        let t_plus = compose_expansions(a11, &inv_rho, n)?
            .add(&compose_expansions(&inv_rho, &adjoint_expansion(a11, n)?, n)?.scale(Complex64::new(-1.0, 0.0)))
            .scale(I)
            .add(&TruncatedExpansion::single(cone_continuation_term(model, &chi)));
        let t_minus = compose_expansions(a12, &inv_rho, n)?
            .add(&compose_expansions(&inv_rho, &adjoint_expansion(a12, n)?, n)?.scale(Complex64::new(-1.0, 0.0)))
            .scale(NEG_I)
            .add(&TruncatedExpansion::single(cone_continuation_term(model, &chi)));
        p12_inv = selfadjoint_sqrt(&t_plus, n)?;
        p22_inv = selfadjoint_sqrt(&t_minus, n)?.scale(Complex64::new(-1.0, 0.0));
    } else {
        let ext = extended_a_rho(model, &chi);
        let quarter = Expr::mul(vec![
            Expr::constant(2.0f64.sqrt()),
            Expr::pow(ext, 0.25),
            Expr::pow(model.rho_expr(), -0.25),
        ]);
        let block = TruncatedExpansion::single(GeneralizedSymbol::new(quarter, 0.5));
        p12_inv = block.clone();
        p22_inv = block.scale(Complex64::new(-1.0, 0.0));
    }

    let p12 = invert_expansion(&p12_inv, n, &ones)?;
    let p22 = invert_expansion(&p22_inv, n, &ones)?;

    let assemble = |p: &TruncatedExpansion,
                    a: &TruncatedExpansion,
                    p_inv: &TruncatedExpansion|
     -> Result<TruncatedExpansion> {
        let conj = compose_expansions(p, &compose_expansions(a, p_inv, n)?, n)?;
        let drift = compose_expansions(p, &dz_expansion(p_inv), n)?;
        // -iB = P A P^{-1} + P ∂_z(P^{-1})  =>  b = i (...)
        Ok(conj.add(&drift).scale(I))
    };
    let mut b_plus = assemble(&p12, a11, &p12_inv)?;
    let mut b_minus = assemble(&p22, a12, &p22_inv)?;
    if selfadjoint {
        let sym = |b: &TruncatedExpansion| -> Result<TruncatedExpansion> {
            Ok(b.add(&adjoint_expansion(b, n)?).scale(Complex64::new(0.5, 0.0)))
        };
        b_plus = sym(&b_plus)?;
        b_minus = sym(&b_minus)?;
    }

    // Q blocks: [[-C, C], [-A12 (1/ρ) C, 1 + A12 (1/ρ) C]] · diag(P12^{-1}, P22^{-1})
    // with C the parametrix of (A11 - A12)(1/ρ), continued elliptically.
    let w_cont = TruncatedExpansion::single(cone_continuation_term(model, &chi)).scale(NEG_I);
    let w = compose_expansions(&a11.add(&a12.scale(Complex64::new(-1.0, 0.0))), &inv_rho, n)?
        .add(&w_cont);
    let c_par = invert_expansion(&w, n, &ones)?;
    let a12_ir_c = compose_expansions(a12, &compose_expansions(&inv_rho, &c_par, n)?, n)?;
    let one_exp = TruncatedExpansion::single(GeneralizedSymbol::constant(1.0));
    let q11 = compose_expansions(&c_par.scale(Complex64::new(-1.0, 0.0)), &p12_inv, n)?;
    let q12 = compose_expansions(&c_par, &p22_inv, n)?;
    let q21 =
        compose_expansions(&a12_ir_c.scale(Complex64::new(-1.0, 0.0)), &p12_inv, n)?;
    let q22 = compose_expansions(&one_exp.add(&a12_ir_c), &p22_inv, n)?;

    let p11 = compose_expansions(&p12, &compose_expansions(a11, &inv_rho, n)?, n)?
        .scale(Complex64::new(-1.0, 0.0));
    let p21 = compose_expansions(&p22, &compose_expansions(a12, &inv_rho, n)?, n)?
        .scale(Complex64::new(-1.0, 0.0));

    Ok(OneWayOperators {
        b_plus,
        b_minus,
        q_blocks: [q11, q12, q21, q22],
        p_blocks: [p11, p12, p21, p22],
        damping: None,
        selfadjoint,
    })
}

/// Discrete adjoint defect of Op(b) against the conjugate-transpose pairing:
/// sup over random band-limited pairs of |⟨Op(b)u, v⟩ - ⟨u, Op(b)v⟩|,
/// normalized by ‖Op(b)u‖‖v‖ + ‖u‖‖Op(b)v‖.
pub fn adjoint_defect(
    b: &GeneralizedSymbol,
    like: &GridField,
    pairs: usize,
    band: (f64, f64),
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u = GridField::random_band_limited(like, &mut rng, band.0, band.1);
        let v = GridField::random_band_limited(like, &mut rng, band.0, band.1);
        let bu = quantize_apply(b, &u)?;
        let bv = quantize_apply(b, &v)?;
        let lhs = bu.inner(&v);
        let rhs = u.inner(&bv);
        let scale = bu.l2_norm() * v.l2_norm() + u.l2_norm() * bv.l2_norm();
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).norm() / scale);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Damping operator
// ---------------------------------------------------------------------------

/// Build the microlocal damping symbol
/// c = η₀ √(τ²+|ξ|²) (1 - χ_ε), self-adjointized as (c + c*)/2. It vanishes
/// on I'_{θ1}, is elliptic of order 1 outside I'_{θ2}, and has nonnegative
/// real principal symbol.
pub fn build_damping(
    angles: &AngleChain,
    model: &WaveModel,
    eta0: f64,
) -> Result<GeneralizedSymbol> {
    if eta0 <= 0.0 {
        return Err(invalid("damping strength must be positive"));
    }
    let chi = model.chi(angles)?.expr;
    let radial = Expr::freq_norm_full();
    let c = Expr::mul(vec![
        Expr::constant(eta0),
        radial,
        Expr::sub(Expr::one(), chi),
    ]);
    let sym = GeneralizedSymbol::new(c.clone(), 1.0);
    // symmetrize; the correction term is excised near the frequency origin
    // where the radial factor is not smooth
    let adj = adjoint_expansion(&TruncatedExpansion::single(sym.clone()), 2)?;
    let corr = Expr::mul2(
        Expr::constant(0.5),
        Expr::sub(adj.sum_expr(), c.clone()),
    );
    let corr = Expr::mul2(
        Expr::profile(ProfileKind::StepUp(0.25, 0.5), Expr::freq_norm_full()),
        corr,
    );
    Ok(GeneralizedSymbol::new(Expr::add2(c, corr), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::Axes;
    use crate::num::TAU;
    use crate::scalenets::build_mollifier;
    use crate::symbol::Ray;

    fn setup() -> (EpsGrid, EpsNet, Mollifier) {
        let grid = EpsGrid::standard();
        let omega = EpsNet::log_log(grid.clone());
        let phi = build_mollifier(2).unwrap();
        (grid, omega, phi)
    }

    fn const_model() -> WaveModel {
        let (_, omega, phi) = setup();
        WaveModel::constant(2.0, 1.0, &omega, &phi).unwrap()
    }

    fn sine_model() -> WaveModel {
        let (_, omega, phi) = setup();
        WaveModel::lateral_speed(64, |x| 1.0 + 0.2 * x.sin(), &omega, &phi).unwrap()
    }

    #[test]
    fn principal_root_on_constant_model() {
        let model = const_model();
        let angles = AngleChain::standard();
        let (b, report) = principal_root(&model, &angles).unwrap();
        assert_eq!(report.verdict, EllipticityVerdict::Elliptic);
        // c = 2, ρ = 1: at (τ, ξ) = (2, 0): a = 1, b = 1
        let p = PhasePoint::new(0.0, 0.0, 2.0, 0.0);
        assert!((b.expr.eval(&p, 1e-4).re - 1.0).abs() < 1e-10);
        // b² = a on the cone
        let p = PhasePoint::new(0.3, 0.0, 4.0, 0.4);
        let a = model.a_expr().eval(&p, 1e-4);
        let bv = b.expr.eval(&p, 1e-4);
        assert!((bv * bv - a).norm() < 1e-10);
        // zero outside the outer cone
        let p = PhasePoint::new(0.0, 0.0, 1.0, 4.0);
        assert_eq!(b.expr.eval(&p, 1e-4), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn principal_root_derivative_cross_check() {
        // unit speed: b = √(τ²-ξ²), ∂_ξ b at (2,1) = -1/√3
        let (_, omega, phi) = setup();
        let model = WaveModel::constant(1.0, 1.0, &omega, &phi).unwrap();
        let b = Expr::sqrt(model.a_expr());
        let p = PhasePoint::new(0.0, 0.0, 2.0, 1.0);
        let exact = b.deriv(Var::Xi(0)).eval(&p, 1e-4).re;
        assert!((exact + 1.0 / 3.0f64.sqrt()).abs() < 1e-12);
        let fd = crate::symbol::fd_deriv(&b, Var::Xi(0), &p, 1e-4);
        assert!(!fd.exact);
        assert!((fd.value.re - exact).abs() < 1e-8);
    }

    #[test]
    fn parametrix_of_bracket_squared() {
        // a = <ξ>²: p0 = <ξ>^{-2}, p#a - 1 = 0 beyond the excision
        let b2 = Expr::add(vec![
            Expr::one(),
            Expr::mul2(Expr::tau(), Expr::tau()),
            Expr::mul2(Expr::xi(), Expr::xi()),
        ]);
        let a = GeneralizedSymbol::new(b2, 2.0);
        let grid = EpsGrid::standard();
        let region = PhaseRegion::FreqAnnulus { lo: 0.0, hi: f64::INFINITY };
        let report =
            ellipticity_probe(&a, &region, &cone_probe_box(), 2.0, &grid).unwrap();
        let p = parametrix(&a, 1, &report).unwrap();
        let pa = compose_expansions(&p, &TruncatedExpansion::single(a.clone()), 3).unwrap();
        let resid = Expr::sub(pa.sum_expr(), Expr::one());
        // beyond 2 r_eps the residual vanishes identically
        let e = grid.values()[3];
        let r = report.threshold_radius.values[3];
        let pt = PhasePoint::new(0.0, 0.0, 0.0, 2.0 * r + 1.0);
        assert!(resid.eval(&pt, e).norm() < 1e-13);
        // inside the excision p vanishes, residual is -1
        let pt = PhasePoint::new(0.0, 0.0, 0.0, 0.25 * r.min(1.0));
        assert!((resid.eval(&pt, e).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parametrix_constant_order_zero_symbol() {
        let a = GeneralizedSymbol::constant(5.0);
        let grid = EpsGrid::standard();
        let region = PhaseRegion::FreqAnnulus { lo: 0.0, hi: f64::INFINITY };
        let report =
            ellipticity_probe(&a, &region, &cone_probe_box(), 0.0, &grid).unwrap();
        let p = parametrix(&a, 3, &report).unwrap();
        assert_eq!(p.terms.len(), 1);
        let e = grid.values()[0];
        let r = report.threshold_radius.values[0];
        let pt = PhasePoint::new(0.0, 0.0, 0.0, 2.0 * r + 1.0);
        assert!((p.sum_expr().eval(&pt, e).re - 0.2).abs() < 1e-14);
    }

    #[test]
    fn parametrix_residual_order_law() {
        // a = (2 + sin x)<ξ>²: p # a - 1 has slope <= -n + 0.3
        let sx = Expr::add2(Expr::constant(2.0), Expr::profile(ProfileKind::Sin, Expr::x()));
        let b2 = Expr::add2(Expr::one(), Expr::mul2(Expr::xi(), Expr::xi()));
        let a = GeneralizedSymbol::new(Expr::mul2(sx, b2), 2.0);
        let grid = EpsGrid::standard();
        let region = PhaseRegion::FreqAnnulus { lo: 0.0, hi: f64::INFINITY };
        let report =
            ellipticity_probe(&a, &region, &cone_probe_box(), 2.0, &grid).unwrap();
        assert_eq!(report.verdict, EllipticityVerdict::Elliptic);
        let rays = [Ray::xi_only(0.4, 0.0), Ray::xi_only(-1.1, 0.0)];
        let mags = crate::symbol::dyadic_magnitudes(4, 10);
        for n in 1..=3usize {
            let p = parametrix(&a, n, &report).unwrap();
            let pa = compose_expansions(&p, &TruncatedExpansion::single(a.clone()), n + 1)
                .unwrap();
            let resid = GeneralizedSymbol::new(
                Expr::sub(pa.sum_expr(), Expr::one()),
                -(n as f64),
            );
            let fit = resid
                .fit_order(
                    FreqIndex::default(),
                    SpaceIndex::default(),
                    &rays,
                    &mags,
                    &[1e-3, 1e-5, 1e-7],
                )
                .unwrap();
            assert!(
                fit.identically_zero || fit.slope <= -(n as f64) + 0.3,
                "n = {n}: slope {}",
                fit.slope
            );
        }
    }

    #[test]
    fn lot_system_solves_trivial_cases() {
        let a1 = Expr::mul2(Expr::constant(NEG_I), Expr::bracket_full());
        let a2 = Expr::mul2(Expr::constant(I), Expr::bracket_full());
        let rho = Expr::one();
        // γ1 = γ2 = 0 → (0, 0)
        let (b1, b2) =
            solve_lot_system(&Expr::zero(), &Expr::zero(), &a1, &a2, &rho, &[]).unwrap();
        assert!(b1.is_zero() && b2.is_zero());
        // γ1 = 0, γ2 = g, ρ = 1 → b1 = g/(a1-a2), b2 = -g/(a1-a2)
        let g = Expr::profile(ProfileKind::Cos, Expr::x());
        let (b1, b2) = solve_lot_system(&Expr::zero(), &g, &a1, &a2, &rho, &[]).unwrap();
        let p = PhasePoint::new(0.7, 0.0, 3.0, 1.0);
        let denom = (a1.eval(&p, 1.0) - a2.eval(&p, 1.0)).re;
        let _ = denom;
        let gv = g.eval(&p, 1.0);
        let dv = a1.eval(&p, 1.0) - a2.eval(&p, 1.0);
        assert!((b1.eval(&p, 1.0) - gv / dv).norm() < 1e-13);
        assert!((b2.eval(&p, 1.0) + gv / dv).norm() < 1e-13);
    }

    #[test]
    fn lot_system_residuals_vanish() {
        // random smooth γ's: substituting back solves the two equations
        let a1 = Expr::mul2(Expr::constant(NEG_I), Expr::bracket_full());
        let a2 = Expr::mul2(Expr::constant(I), Expr::bracket_full());
        let rho = Expr::add2(Expr::constant(2.0), Expr::profile(ProfileKind::Sin, Expr::x()));
        let inv_rho = Expr::recip(rho.clone());
        let g1 = Expr::profile(ProfileKind::Cos, Expr::x());
        let g2 = Expr::mul2(Expr::profile(ProfileKind::Sin, Expr::x()), Expr::xi());
        let (b1, b2) = solve_lot_system(&g1, &g2, &a1, &a2, &rho, &[]).unwrap();
        let eq1 = Expr::add(vec![
            g1.clone(),
            Expr::mul2(b1.clone(), inv_rho.clone()),
            Expr::mul2(inv_rho.clone(), b2.clone()),
        ]);
        let eq2 = Expr::add(vec![
            g2.clone(),
            Expr::mul(vec![b1, inv_rho.clone(), a2.clone()]),
            Expr::mul(vec![a1.clone(), inv_rho.clone(), b2]),
        ]);
        for &(x, tau, xi) in &[(0.3, 2.0, 0.5), (-1.2, 5.0, -2.0), (2.0, 1.0, 0.2)] {
            let p = PhasePoint::new(x, 0.0, tau, xi);
            assert!(eq1.eval(&p, 1.0).norm() < 1e-10);
            assert!(eq2.eval(&p, 1.0).norm() < 1e-10);
        }
    }

    #[test]
    fn lot_system_detects_degeneracy() {
        let a1 = Expr::xi();
        let a2 = Expr::xi();
        let probes = [(PhasePoint::new(0.0, 0.0, 1.0, 1.0), 1.0)];
        assert!(matches!(
            solve_lot_system(&Expr::zero(), &Expr::one(), &a1, &a2, &Expr::one(), &probes),
            Err(Error::DegenerateSystem(_))
        ));
    }

    #[test]
    fn constant_model_residuals_vanish_identically() {
        let model = const_model();
        let angles = AngleChain::standard();
        for n in [1usize, 2, 3] {
            let f = factorize_l(&model, &angles, n, Branch::RootMinus).unwrap();
            assert!(f.gamma1.expr.is_zero(), "gamma1 not structurally zero at n={n}");
            assert!(f.gamma2.expr.is_zero(), "gamma2 not structurally zero at n={n}");
            assert_eq!(f.a1.terms.len(), 1, "no corrections expected");
        }
    }

    #[test]
    fn factorization_branches_flip_odd_terms() {
        let model = sine_model();
        let angles = AngleChain::standard();
        let fm = factorize_l(&model, &angles, 2, Branch::RootMinus).unwrap();
        let fp = factorize_l(&model, &angles, 2, Branch::RootPlus).unwrap();
        // order-1 terms negate, order-0 terms of a1 match a12-reference signs
        let e = model.grid.values()[3];
        let p = PhasePoint::new(0.4, 0.0, 8.0, 1.2);
        let m1 = fm.a1.terms[0].expr.eval(&p, e);
        let p1 = fp.a1.terms[0].expr.eval(&p, e);
        assert!((m1 + p1).norm() < 1e-10);
    }

    #[test]
    fn variable_model_matches_zeroth_order_reference() {
        let model = sine_model();
        let angles = AngleChain::standard();
        let f = factorize_l(&model, &angles, 2, Branch::RootMinus).unwrap();
        let fp = factorize_l(&model, &angles, 2, Branch::RootPlus).unwrap();
        let (a11_ref, a12_ref) = zeroth_order_reference(&model);
        let e = model.grid.values()[2];
        let mut rng = Rng::new(42);
        let cs = model.cstar();
        for _ in 0..20 {
            // random phase points inside I'_30
            let x = -3.0 + 6.0 * rng.uniform();
            let tau = 2.0 + 14.0 * rng.uniform();
            let tau = if rng.uniform() < 0.5 { -tau } else { tau };
            let c = cs.value(x, 0.0);
            let ratio = (2.0 * rng.uniform() - 1.0) * angles.theta1.sin() * 0.98 / c;
            let p = PhasePoint::new(x, 0.0, tau, tau * ratio);
            let got = f.a1.sum_expr().eval(&p, e);
            let want = a11_ref.expr.eval(&p, e);
            assert!(
                (got - want).norm() < 1e-8 * want.norm().max(1.0),
                "a11 mismatch at {p:?}: {got} vs {want}"
            );
            let got = fp.a1.sum_expr().eval(&p, e);
            let want = a12_ref.expr.eval(&p, e);
            assert!(
                (got - want).norm() < 1e-8 * want.norm().max(1.0),
                "a12 mismatch at {p:?}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn variable_model_residual_order() {
        let model = sine_model();
        let angles = AngleChain::standard();
        let n = 3;
        let f = factorize_l(&model, &angles, n, Branch::RootMinus).unwrap();
        // rays inside the inner cone
        let mut rays = Vec::new();
        for &x in &[0.0, 1.0] {
            let c = model.cstar().value(x, 0.0);
            let s = 0.7 * angles.theta1.sin() / c;
            let norm = (1.0 + s * s).sqrt();
            rays.push(Ray { x, z: 0.0, dir_tau: 1.0 / norm, dir_xi: s / norm });
        }
        let mags = crate::symbol::dyadic_magnitudes(4, 10);
        let eps = [1e-3, 1e-5, 1e-7];
        let fit2 = f
            .gamma2
            .fit_order(FreqIndex::default(), SpaceIndex::default(), &rays, &mags, &eps)
            .unwrap();
        assert!(
            fit2.identically_zero || fit2.slope <= (2 - n as i32) as f64 + 0.3,
            "gamma2 slope {}",
            fit2.slope
        );
        let fit1 = f
            .gamma1
            .fit_order(FreqIndex::default(), SpaceIndex::default(), &rays, &mags, &eps)
            .unwrap();
        assert!(
            fit1.identically_zero || fit1.slope <= (1 - n as i32) as f64 + 0.3,
            "gamma1 slope {}",
            fit1.slope
        );
    }

    #[test]
    fn selfadjoint_sqrt_of_constant() {
        let t = TruncatedExpansion::single(GeneralizedSymbol::constant(4.0));
        let x = selfadjoint_sqrt(&t, 3).unwrap();
        assert_eq!(x.terms.len(), 1);
        assert_eq!(x.sum_expr().as_const(), Some(Complex64::new(2.0, 0.0)));
    }

    #[test]
    fn selfadjoint_sqrt_of_x_independent() {
        // T = 1 + <ξ>: X = (1+<ξ>)^{1/2} exactly, residual 0
        let t_expr = Expr::add2(Expr::one(), Expr::bracket_xi());
        let t = TruncatedExpansion::single(GeneralizedSymbol::new(t_expr.clone(), 1.0));
        let x = selfadjoint_sqrt(&t, 3).unwrap();
        assert_eq!(x.terms.len(), 1);
        let xx = compose_expansions(&x, &x, 4).unwrap();
        let resid = Expr::sub(xx.sum_expr(), t_expr);
        assert!(resid.is_zero());
    }

    #[test]
    fn selfadjoint_sqrt_residual_improves_monotonically() {
        // T = (1 + 0.3 sin x)<ξ>: residual slope decreases with each term
        let t_expr = Expr::mul2(
            Expr::add2(
                Expr::one(),
                Expr::mul2(Expr::constant(0.3), Expr::profile(ProfileKind::Sin, Expr::x())),
            ),
            Expr::bracket_xi(),
        );
        let t = TruncatedExpansion::single(GeneralizedSymbol::new(t_expr.clone(), 1.0));
        let rays = [Ray::xi_only(0.3, 0.0), Ray::xi_only(-0.9, 0.0)];
        let mags = crate::symbol::dyadic_magnitudes(4, 10);
        let mut slopes = Vec::new();
        for n in 1..=3usize {
            let x = selfadjoint_sqrt(&t, n).unwrap();
            let xx = compose_expansions(&x, &x, n + 1).unwrap();
            let resid =
                GeneralizedSymbol::new(Expr::sub(xx.sum_expr(), t_expr.clone()), 0.0);
            let fit = resid
                .fit_order(FreqIndex::default(), SpaceIndex::default(), &rays, &mags, &[1.0])
                .unwrap();
            slopes.push(if fit.identically_zero { f64::NEG_INFINITY } else { fit.slope });
        }
        assert!(slopes[1] < slopes[0], "slopes {slopes:?}");
        assert!(slopes[2] < slopes[1], "slopes {slopes:?}");
    }

    #[test]
    fn selfadjoint_sqrt_rejects_negative_principal() {
        let t = TruncatedExpansion::single(GeneralizedSymbol::new(
            Expr::neg(Expr::bracket_xi()),
            1.0,
        ));
        assert!(selfadjoint_sqrt(&t, 2).is_err());
    }

    #[test]
    fn bpm_constant_model_is_pm_masked_root() {
        let model = const_model();
        let angles = AngleChain::standard();
        let fm = factorize_l(&model, &angles, 2, Branch::RootMinus).unwrap();
        let fp = factorize_l(&model, &angles, 2, Branch::RootPlus).unwrap();
        let ops = build_bpm(&model, &fm, &fp, true).unwrap();
        let e = model.grid.values()[2];
        // inside the plateau b± = ±√(τ²/c² - ξ²)
        let p = PhasePoint::new(0.0, 0.0, 8.0, 0.5);
        let a = model.a_expr().eval(&p, e).re;
        let want = a.sqrt();
        let got = ops.b_plus.sum_expr().eval(&p, e);
        assert!(
            (got - Complex64::new(want, 0.0)).norm() < 1e-8 * want,
            "b+ {got} vs {want}"
        );
        let got = ops.b_minus.sum_expr().eval(&p, e);
        assert!((got + Complex64::new(want, 0.0)).norm() < 1e-8 * want);
    }

    #[test]
    fn bpm_zeroth_order_matches_selfadjoint_formula() {
        let model = sine_model();
        let angles = AngleChain::standard();
        let n = 3;
        let fm = factorize_l(&model, &angles, n, Branch::RootMinus).unwrap();
        let fp = factorize_l(&model, &angles, n, Branch::RootPlus).unwrap();
        let ops = build_bpm(&model, &fm, &fp, true).unwrap();
        // reference: b± = ±(b + (i/2b) Σ ∂_ξ b ∂_x b) through order 0
        let b = Expr::sqrt(model.a_expr());
        let s = Expr::mul2(b.deriv(Var::Xi(0)), b.deriv(Var::X(0)));
        let corr = Expr::mul(vec![
            Expr::constant(Complex64::new(0.0, 0.5)),
            Expr::recip(b.clone()),
            s,
        ]);
        let want_plus = Expr::add2(b.clone(), corr.clone());
        let e = model.grid.values()[2];
        let mut rng = Rng::new(4242);
        let cs = model.cstar();
        for _ in 0..20 {
            let x = -3.0 + 6.0 * rng.uniform();
            let tau = 8.0 + 24.0 * rng.uniform();
            let c = cs.value(x, 0.0);
            let ratio = (2.0 * rng.uniform() - 1.0) * angles.theta1.sin() * 0.9 / c;
            let p = PhasePoint::new(x, 0.0, tau, tau * ratio);
            let got: Complex64 = ops.b_plus.sum_from_order(0.0).eval(&p, e);
            let want = want_plus.eval(&p, e);
            assert!(
                (got - want).norm() < 1e-8 * want.norm().max(1.0),
                "b+ zeroth order at {p:?}: {got} vs {want}"
            );
            let got = ops.b_minus.sum_from_order(0.0).eval(&p, e);
            let want = -want;
            assert!(
                (got - want).norm() < 1e-8 * want.norm().max(1.0),
                "b- zeroth order mismatch"
            );
        }
    }

    #[test]
    fn bpm_discrete_adjoint_defect_small() {
        let model = sine_model();
        let angles = AngleChain::standard();
        let n = 3;
        let fm = factorize_l(&model, &angles, n, Branch::RootMinus).unwrap();
        let fp = factorize_l(&model, &angles, n, Branch::RootPlus).unwrap();
        let ops = build_bpm(&model, &fm, &fp, true).unwrap();
        let e = model.grid.values()[2];
        let like = GridField::zeros_2d(64, 64, TAU, TAU).unwrap().with_meta(0.0, e);
        let b = ops.b_plus.as_symbol();
        let defect = adjoint_defect(&b, &like, 4, (4.0, 24.0), 99).unwrap();
        assert!(defect < 1e-4, "adjoint defect {defect}");
    }

    #[test]
    fn damping_vanishes_inside_and_grows_outside() {
        let model = const_model();
        let angles = AngleChain::standard();
        let c = build_damping(&angles, &model, 1.0).unwrap();
        let e = model.grid.values()[2];
        // deep inside the inner cone
        let p = PhasePoint::new(0.0, 0.0, 10.0, 0.2);
        assert!(c.expr.eval(&p, e).norm() < 1e-12);
        // far outside the outer cone: principal = η0 |(τ,ξ)|
        let p = PhasePoint::new(0.0, 0.0, 1.0, 10.0);
        let r = p.freq_norm();
        let v = c.expr.eval(&p, e);
        assert!((v.re - r).abs() < 0.05 * r, "damping {v} vs {r}");
        // real nonnegative principal everywhere sampled
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            let tau = 8.0 * (rng.uniform() - 0.5);
            let xi = 8.0 * (rng.uniform() - 0.5);
            if tau.abs() < 1e-2 && xi.abs() < 1e-2 {
                continue;
            }
            let p = PhasePoint::new(0.0, 0.0, tau, xi);
            let v = c.expr.eval(&p, e);
            assert!(v.re >= -1e-10, "negative damping at {p:?}: {v}");
        }
    }

    #[test]
    fn damping_quantizes_finite_on_grid() {
        let model = const_model();
        let angles = AngleChain::standard();
        let c = build_damping(&angles, &model, 1.0).unwrap();
        let e = model.grid.values()[2];
        let like = GridField::zeros_2d(32, 32, TAU, TAU).unwrap().with_meta(0.0, e);
        let mut rng = Rng::new(7);
        let u = GridField::random_band_limited(&like, &mut rng, 1.0, 10.0);
        let v = quantize_apply(&c, &u).unwrap();
        assert!(v.is_finite());
        assert_eq!(v.axes, Axes::TX);
    }
}
