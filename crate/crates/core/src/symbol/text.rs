//! "SYM v1" textual form for symbol expressions: a line-oriented header with
//! leaf tables (nets, fields) followed by one prefix s-expression. The writer
//! is deterministic, so round-tripped symbols serialize byte-identically.

use crate::error::{invalid, Error, Result};
use crate::scalenets::{EpsGrid, EpsNet};
use crate::symbol::expr::{Expr, Kind, ProfileKind, Var};
use crate::symbol::field::{FieldFamily, SmoothField};
use crate::symbol::GeneralizedSymbol;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use num_complex::Complex64;

/// Serialize a symbol to SYM v1 text.
pub fn to_text(sym: &GeneralizedSymbol) -> String {
    let mut nets: Vec<(u64, String)> = Vec::new();
    let mut fields: Vec<(u64, String)> = Vec::new();
    let mut net_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut field_ids: BTreeMap<u64, usize> = BTreeMap::new();
    collect_leaves(&sym.expr, &mut nets, &mut fields, &mut net_ids, &mut field_ids);

    let mut out = String::new();
    out.push_str("SYM v1\n");
    out.push_str(&format!(
        "meta order={} rho={} delta={} nx={} budget={}\n",
        fmt_f64(sym.order),
        fmt_f64(sym.rho),
        fmt_f64(sym.delta),
        sym.nx,
        sym.deriv_budget
    ));
    for (i, (_, line)) in nets.iter().enumerate() {
        out.push_str(&format!("net {i} {line}\n"));
    }
    for (i, (_, line)) in fields.iter().enumerate() {
        out.push_str(&format!("field {i} {line}\n"));
    }
    out.push_str("expr ");
    write_expr(&sym.expr, &net_ids, &field_ids, &mut out);
    out.push('\n');
    out
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        return "inf".to_string();
    }
    if v == f64::NEG_INFINITY {
        return "-inf".to_string();
    }
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse::<f64>().map_err(|_| invalid(format!("bad float '{s}'"))),
    }
}

fn collect_leaves(
    e: &Expr,
    nets: &mut Vec<(u64, String)>,
    fields: &mut Vec<(u64, String)>,
    net_ids: &mut BTreeMap<u64, usize>,
    field_ids: &mut BTreeMap<u64, usize>,
) {
    match &e.0.kind {
        Kind::Net(n) => {
            let key = leaf_hash_net(n);
            if !net_ids.contains_key(&key) {
                let mut line = format!("{} grid=", sanitize(&n.label));
                line.push_str(&join_f64(&n.grid));
                line.push_str(" values=");
                line.push_str(&join_f64(&n.values));
                net_ids.insert(key, nets.len());
                nets.push((key, line));
            }
        }
        Kind::Field(f) => {
            let key = f.fam.content_hash();
            if !field_ids.contains_key(&key) {
                let line = format!("{} {}", sanitize(&f.label), field_family_text(&f.fam));
                field_ids.insert(key, fields.len());
                fields.push((key, line));
            }
        }
        Kind::Add(ts) | Kind::Mul(ts) => {
            for t in ts {
                collect_leaves(t, nets, fields, net_ids, field_ids);
            }
        }
        Kind::Pow(b, _) => collect_leaves(b, nets, fields, net_ids, field_ids),
        Kind::Profile(_, _, a) => collect_leaves(a, nets, fields, net_ids, field_ids),
        _ => {}
    }
}

fn leaf_hash_net(n: &crate::symbol::expr::NetLeaf) -> u64 {
    let mut h = 0xabcd_ef01_2345_6789u64;
    for v in n.grid.iter().chain(n.values.iter()) {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn sanitize(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "leaf".to_string()
    } else {
        s
    }
}

fn join_f64(vs: &[f64]) -> String {
    let parts: Vec<String> = vs.iter().map(|v| fmt_f64(*v)).collect();
    parts.join(",")
}

fn field_family_text(fam: &FieldFamily) -> String {
    match fam {
        FieldFamily::Fixed(f) => format!("fixed {}", field_text(f)),
        FieldFamily::PerEps { eps, slices } => {
            let mut s = format!("pereps eps={}", join_f64(eps));
            for f in slices {
                s.push_str(" | ");
                s.push_str(&field_text(f));
            }
            s
        }
    }
}

fn field_text(f: &SmoothField) -> String {
    let mut s = format!("dc={}", fmt_f64(f.dc()));
    s.push_str(" modes=");
    let parts: Vec<String> = f
        .modes()
        .iter()
        .map(|(kx, kz, c)| format!("{kx}:{kz}:{}:{}", fmt_f64(c.re), fmt_f64(c.im)))
        .collect();
    s.push_str(&parts.join(";"));
    s
}

fn write_expr(
    e: &Expr,
    net_ids: &BTreeMap<u64, usize>,
    field_ids: &BTreeMap<u64, usize>,
    out: &mut String,
) {
    match &e.0.kind {
        Kind::Const(c) => out.push_str(&format!("(const {} {})", fmt_f64(c.re), fmt_f64(c.im))),
        Kind::Coord(v) => {
            let name = match v {
                Var::X(0) => "x0",
                Var::X(_) => "x1",
                Var::Z => "z",
                Var::Tau => "tau",
                Var::Xi(0) => "xi0",
                Var::Xi(_) => "xi1",
            };
            out.push_str(&format!("(coord {name})"));
        }
        Kind::Net(n) => {
            let id = net_ids[&leaf_hash_net(n)];
            out.push_str(&format!("(net {id})"));
        }
        Kind::Field(f) => {
            let id = field_ids[&f.fam.content_hash()];
            out.push_str(&format!("(fld {id} {} {})", f.dx, f.dz));
        }
        Kind::Add(ts) => {
            out.push_str("(add");
            for t in ts {
                out.push(' ');
                write_expr(t, net_ids, field_ids, out);
            }
            out.push(')');
        }
        Kind::Mul(ts) => {
            out.push_str("(mul");
            for t in ts {
                out.push(' ');
                write_expr(t, net_ids, field_ids, out);
            }
            out.push(')');
        }
        Kind::Pow(b, p) => {
            out.push_str(&format!("(pow {} ", fmt_f64(*p)));
            write_expr(b, net_ids, field_ids, out);
            out.push(')');
        }
        Kind::Profile(kind, ord, a) => {
            let k = match kind {
                ProfileKind::Sin => "sin".to_string(),
                ProfileKind::Cos => "cos".to_string(),
                ProfileKind::Exp => "exp".to_string(),
                ProfileKind::StepUp(a, b) => format!("up:{}:{}", fmt_f64(*a), fmt_f64(*b)),
                ProfileKind::StepDown(a, b) => format!("down:{}:{}", fmt_f64(*a), fmt_f64(*b)),
            };
            out.push_str(&format!("(prof {k} {ord} "));
            write_expr(a, net_ids, field_ids, out);
            out.push(')');
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// Parse SYM v1 text back into a symbol.
pub fn from_text(text: &str) -> Result<GeneralizedSymbol> {
    let mut order = 0.0;
    let mut rho = 1.0;
    let mut delta = 0.0;
    let mut nx: u8 = 1;
    let mut budget: u8 = super::DEFAULT_DERIV_BUDGET;
    let mut nets: Vec<(String, EpsNet)> = Vec::new();
    let mut fields: Vec<(String, Arc<FieldFamily>)> = Vec::new();
    let mut expr: Option<Expr> = None;

    let mut lines = text.lines();
    match lines.next() {
        Some("SYM v1") => {}
        _ => return Err(invalid("missing SYM v1 header")),
    }
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            for kv in rest.split_whitespace() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| invalid(format!("bad meta entry '{kv}'")))?;
                match k {
                    "order" => order = parse_f64(v)?,
                    "rho" => rho = parse_f64(v)?,
                    "delta" => delta = parse_f64(v)?,
                    "nx" => nx = v.parse().map_err(|_| invalid("bad nx"))?,
                    "budget" => budget = v.parse().map_err(|_| invalid("bad budget"))?,
                    _ => return Err(invalid(format!("unknown meta key '{k}'"))),
                }
            }
        } else if let Some(rest) = line.strip_prefix("net ") {
            let mut it = rest.splitn(3, ' ');
            let _id: usize =
                it.next().and_then(|s| s.parse().ok()).ok_or_else(|| invalid("bad net id"))?;
            let label = it.next().ok_or_else(|| invalid("missing net label"))?;
            let body = it.next().ok_or_else(|| invalid("missing net body"))?;
            let mut grid = None;
            let mut values = None;
            for kv in body.split_whitespace() {
                let (k, v) =
                    kv.split_once('=').ok_or_else(|| invalid("bad net field"))?;
                match k {
                    "grid" => grid = Some(split_f64(v)?),
                    "values" => values = Some(split_f64(v)?),
                    _ => return Err(invalid(format!("unknown net key '{k}'"))),
                }
            }
            let grid = EpsGrid::new(grid.ok_or_else(|| invalid("net missing grid"))?)?;
            let net = EpsNet::new(grid, values.ok_or_else(|| invalid("net missing values"))?)?;
            nets.push((label.to_string(), net));
        } else if let Some(rest) = line.strip_prefix("field ") {
            let mut it = rest.splitn(3, ' ');
            let _id: usize =
                it.next().and_then(|s| s.parse().ok()).ok_or_else(|| invalid("bad field id"))?;
            let label = it.next().ok_or_else(|| invalid("missing field label"))?;
            let body = it.next().ok_or_else(|| invalid("missing field body"))?;
            fields.push((label.to_string(), Arc::new(parse_family(body)?)));
        } else if let Some(rest) = line.strip_prefix("expr ") {
            let mut toks = tokenize(rest);
            expr = Some(parse_expr(&mut toks, &nets, &fields)?);
            if !toks.is_empty() {
                return Err(invalid("trailing tokens after expression"));
            }
        } else {
            return Err(invalid(format!("unrecognized SYM line '{line}'")));
        }
    }
    let expr = expr.ok_or_else(|| invalid("SYM text has no expr line"))?;
    Ok(GeneralizedSymbol {
        expr,
        order,
        rho,
        delta,
        nx,
        deriv_budget: budget,
    })
}

fn split_f64(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

fn parse_family(body: &str) -> Result<FieldFamily> {
    if let Some(rest) = body.strip_prefix("fixed ") {
        return Ok(FieldFamily::Fixed(parse_field(rest)?));
    }
    if let Some(rest) = body.strip_prefix("pereps ") {
        let mut parts = rest.split(" | ");
        let head = parts.next().ok_or_else(|| invalid("empty pereps field"))?;
        let eps = head
            .strip_prefix("eps=")
            .ok_or_else(|| invalid("pereps field missing eps list"))
            .and_then(split_f64)?;
        let slices: Result<Vec<SmoothField>> = parts.map(parse_field).collect();
        return FieldFamily::per_eps(eps, slices?);
    }
    Err(invalid("field body must start with 'fixed' or 'pereps'"))
}

fn parse_field(s: &str) -> Result<SmoothField> {
    let mut dc = 0.0;
    let mut modes = Vec::new();
    for kv in s.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| invalid("bad field entry"))?;
        match k {
            "dc" => dc = parse_f64(v)?,
            "modes" => {
                if v.is_empty() {
                    continue;
                }
                for m in v.split(';') {
                    if m.is_empty() {
                        continue;
                    }
                    let ps: Vec<&str> = m.split(':').collect();
                    if ps.len() != 4 {
                        return Err(invalid(format!("bad mode '{m}'")));
                    }
                    let kx: i32 = ps[0].parse().map_err(|_| invalid("bad kx"))?;
                    let kz: i32 = ps[1].parse().map_err(|_| invalid("bad kz"))?;
                    let re = parse_f64(ps[2])?;
                    let im = parse_f64(ps[3])?;
                    modes.push((kx, kz, Complex64::new(re, im)));
                }
            }
            _ => return Err(invalid(format!("unknown field key '{k}'"))),
        }
    }
    Ok(SmoothField::from_parts(dc, modes))
}

fn tokenize(s: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' | ')' => {
                if !cur.is_empty() {
                    toks.push(core::mem::take(&mut cur));
                }
                toks.push(c.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    toks.push(core::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        toks.push(cur);
    }
    toks.reverse();
    toks
}

fn next_tok(toks: &mut Vec<String>) -> Result<String> {
    toks.pop().ok_or_else(|| invalid("unexpected end of expression"))
}

fn parse_expr(
    toks: &mut Vec<String>,
    nets: &[(String, EpsNet)],
    fields: &[(String, Arc<FieldFamily>)],
) -> Result<Expr> {
    let t = next_tok(toks)?;
    if t != "(" {
        return Err(invalid(format!("expected '(', got '{t}'")));
    }
    let head = next_tok(toks)?;
    let e = match head.as_str() {
        "const" => {
            let re = parse_f64(&next_tok(toks)?)?;
            let im = parse_f64(&next_tok(toks)?)?;
            Expr::constant(Complex64::new(re, im))
        }
        "coord" => {
            let name = next_tok(toks)?;
            let v = match name.as_str() {
                "x0" => Var::X(0),
                "x1" => Var::X(1),
                "z" => Var::Z,
                "tau" => Var::Tau,
                "xi0" => Var::Xi(0),
                "xi1" => Var::Xi(1),
                _ => return Err(invalid(format!("unknown coord '{name}'"))),
            };
            Expr::coord(v)
        }
        "net" => {
            let id: usize = next_tok(toks)?
                .parse()
                .map_err(|_| invalid("bad net reference"))?;
            let (label, net) = nets
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("net {id} not declared")))?;
            Expr::net(label, net)
        }
        "fld" => {
            let id: usize = next_tok(toks)?
                .parse()
                .map_err(|_| invalid("bad field reference"))?;
            let dx: u8 = next_tok(toks)?.parse().map_err(|_| invalid("bad dx"))?;
            let dz: u8 = next_tok(toks)?.parse().map_err(|_| invalid("bad dz"))?;
            let (label, fam) = fields
                .get(id)
                .ok_or_else(|| Error::InvalidInput(format!("field {id} not declared")))?;
            let base = Expr::field(label, fam.clone());
            let mut e = base;
            for _ in 0..dx {
                e = e.deriv(Var::X(0));
            }
            for _ in 0..dz {
                e = e.deriv(Var::Z);
            }
            e
        }
        "add" => {
            let mut terms = Vec::new();
            while toks.last().map(|s| s.as_str()) != Some(")") {
                terms.push(parse_expr(toks, nets, fields)?);
            }
            Expr::add(terms)
        }
        "mul" => {
            let mut terms = Vec::new();
            while toks.last().map(|s| s.as_str()) != Some(")") {
                terms.push(parse_expr(toks, nets, fields)?);
            }
            Expr::mul(terms)
        }
        "pow" => {
            let p = parse_f64(&next_tok(toks)?)?;
            let b = parse_expr(toks, nets, fields)?;
            Expr::pow(b, p)
        }
        "prof" => {
            let kind_s = next_tok(toks)?;
            let kind = if kind_s == "sin" {
                ProfileKind::Sin
            } else if kind_s == "cos" {
                ProfileKind::Cos
            } else if kind_s == "exp" {
                ProfileKind::Exp
            } else if let Some(rest) = kind_s.strip_prefix("up:") {
                let (a, b) = rest.split_once(':').ok_or_else(|| invalid("bad step"))?;
                ProfileKind::StepUp(parse_f64(a)?, parse_f64(b)?)
            } else if let Some(rest) = kind_s.strip_prefix("down:") {
                let (a, b) = rest.split_once(':').ok_or_else(|| invalid("bad step"))?;
                ProfileKind::StepDown(parse_f64(a)?, parse_f64(b)?)
            } else {
                return Err(invalid(format!("unknown profile '{kind_s}'")));
            };
            let ord: u8 = next_tok(toks)?.parse().map_err(|_| invalid("bad profile order"))?;
            let a = parse_expr(toks, nets, fields)?;
            Expr::profile_d(kind, ord, a)
        }
        _ => return Err(invalid(format!("unknown expression head '{head}'"))),
    };
    let close = next_tok(toks)?;
    if close != ")" {
        return Err(invalid(format!("expected ')', got '{close}'")));
    }
    Ok(e)
}
