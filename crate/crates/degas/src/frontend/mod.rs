//! Lexing, parsing and static validation of source programs.
//!
//! A program is a `;`-separated statement sequence over real variables.
//! Variables are introduced by first occurrence and all start standard
//! normal. Parameters are referenced as `_name` in program text and declared
//! in a sidecar file with one `name init lo hi` record per line
//! (`inf`/`-inf` bounds allowed, `#` starts a comment).
//!
//! ```text
//! x = gm([1.], [0.], [_sigma]);
//! if (x < _theta) { y = -1.; } else { y = 1.; }
//! ```

mod lexer;
mod parser;

pub use lexer::Span;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::diff::{Interval, ParamStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontendError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("parameter file line {line}: {msg}")]
    ParamFile { line: usize, msg: String },
    #[error("invalid program:\n{}", .violations.join("\n"))]
    Validation { violations: Vec<String> },
}

impl FrontendError {
    fn syntax(span: Span, msg: impl Into<String>) -> Self {
        FrontendError::Syntax {
            line: span.line,
            col: span.col,
            msg: msg.into(),
        }
    }
}

/// A literal or a reference to a named parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Lit(f64),
    Param(String),
}

impl Value {
    pub fn as_lit(&self) -> Option<f64> {
        match self {
            Value::Lit(v) => Some(*v),
            Value::Param(_) => None,
        }
    }
}

/// Right-hand side of a deterministic assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Product of two (possibly equal) variables.
    Product(String, String),
    /// `sum(coeff * var) + constant`.
    Linear {
        terms: Vec<(Value, String)>,
        constant: Value,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pred {
    True,
    False,
    Cmp {
        var: String,
        op: CmpOp,
        bound: Value,
    },
}

/// A `gm(weights, means, stds)` literal.
#[derive(Debug, Clone, PartialEq)]
pub struct GmLit {
    pub weights: Vec<Value>,
    pub means: Vec<Value>,
    pub stds: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Skip,
    Assign { var: String, expr: Expr },
    RndAssign { var: String, gm: GmLit },
    If { guard: Pred, then_body: Vec<Stmt>, else_body: Vec<Stmt> },
    Observe(Pred),
}

/// Declaration of one optimizable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub init: f64,
    pub domain: Interval,
}

/// Parsed program. `var_names` fixes the state-vector index of each
/// variable (first occurrence order).
#[derive(Debug, Clone, PartialEq)]
pub struct Ast {
    pub var_names: Vec<String>,
    pub params: Vec<ParamDecl>,
    pub body: Vec<Stmt>,
}

impl Ast {
    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    /// Names of all parameters referenced anywhere in the body.
    pub fn param_refs(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        fn visit_value(v: &Value, set: &mut BTreeSet<String>) {
            if let Value::Param(p) = v {
                set.insert(p.clone());
            }
        }
        fn visit_pred(p: &Pred, set: &mut BTreeSet<String>) {
            if let Pred::Cmp { bound, .. } = p {
                visit_value(bound, set);
            }
        }
        fn visit(stmts: &[Stmt], set: &mut BTreeSet<String>) {
            for s in stmts {
                match s {
                    Stmt::Skip => {}
                    Stmt::Assign { expr, .. } => match expr {
                        Expr::Product(..) => {}
                        Expr::Linear { terms, constant } => {
                            for (v, _) in terms {
                                visit_value(v, set);
                            }
                            visit_value(constant, set);
                        }
                    },
                    Stmt::RndAssign { gm, .. } => {
                        for v in gm.weights.iter().chain(&gm.means).chain(&gm.stds) {
                            visit_value(v, set);
                        }
                    }
                    Stmt::If { guard, then_body, else_body } => {
                        visit_pred(guard, set);
                        visit(then_body, set);
                        visit(else_body, set);
                    }
                    Stmt::Observe(p) => visit_pred(p, set),
                }
            }
        }
        visit(&self.body, &mut set);
        set
    }
}

/// Parses program source. Parameter declarations are attached later by
/// [`validate`].
pub fn parse(source: &str) -> Result<Ast, FrontendError> {
    parser::parse(source)
}

/// Parses a sidecar parameter file: one `name init lo hi` record per line.
pub fn parse_param_file(text: &str) -> Result<Vec<ParamDecl>, FrontendError> {
    let mut decls: Vec<ParamDecl> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(FrontendError::ParamFile {
                line,
                msg: format!("expected `name init lo hi`, found {} field(s)", fields.len()),
            });
        }
        let name = fields[0].trim_start_matches('_').to_string();
        if name.is_empty() {
            return Err(FrontendError::ParamFile { line, msg: "empty parameter name".into() });
        }
        let parse_num = |s: &str| -> Result<f64, FrontendError> {
            match s {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => s.parse().map_err(|_| FrontendError::ParamFile {
                    line,
                    msg: format!("bad number `{s}`"),
                }),
            }
        };
        let init = parse_num(fields[1])?;
        let lo = parse_num(fields[2])?;
        let hi = parse_num(fields[3])?;
        if !(lo < hi) {
            return Err(FrontendError::ParamFile {
                line,
                msg: format!("empty domain [{lo}, {hi}]"),
            });
        }
        if !(init >= lo && init <= hi) || !init.is_finite() {
            return Err(FrontendError::ParamFile {
                line,
                msg: format!("initial value {init} outside domain [{lo}, {hi}]"),
            });
        }
        if decls.iter().any(|d| d.name == name) {
            return Err(FrontendError::ParamFile {
                line,
                msg: format!("duplicate parameter `{name}`"),
            });
        }
        decls.push(ParamDecl {
            name,
            init,
            domain: Interval::new(lo, hi),
        });
    }
    Ok(decls)
}

/// Checks all static invariants and binds parameter declarations to the AST.
///
/// Also builds the [`ParamStore`], marking parameterized `gm` weight vectors
/// for simplex projection. Every violated check is reported, not just the
/// first.
pub fn validate(mut ast: Ast, decls: Vec<ParamDecl>) -> Result<(Ast, ParamStore), FrontendError> {
    let mut violations = Vec::new();

    let declared: BTreeSet<&str> = decls.iter().map(|d| d.name.as_str()).collect();
    for r in ast.param_refs() {
        if !declared.contains(r.as_str()) {
            violations.push(format!("unknown parameter `_{r}` (not declared)"));
        }
    }

    if ast.var_names.len() > 64 {
        violations.push(format!(
            "program has {} variables; at most 64 are supported",
            ast.var_names.len()
        ));
    }

    let mut store = ParamStore::new();
    for d in &decls {
        store.insert(&d.name, d.init, d.domain);
    }

    fn check_gm(gm: &GmLit, var: &str, violations: &mut Vec<String>, store: &mut ParamStore) {
        let c = gm.weights.len();
        if c == 0 || gm.means.len() != c || gm.stds.len() != c {
            violations.push(format!(
                "gm literal for `{var}`: weight/mean/std vectors must have equal nonzero length"
            ));
            return;
        }
        let mut lit_sum = 0.0;
        let mut all_lit = true;
        let mut param_names = Vec::new();
        for w in &gm.weights {
            match w {
                Value::Lit(v) => {
                    if *v < 0.0 {
                        violations.push(format!("gm literal for `{var}`: negative weight {v}"));
                    }
                    lit_sum += v;
                }
                Value::Param(p) => {
                    all_lit = false;
                    param_names.push(p.clone());
                    // Admissible parameter values must keep the weight
                    // non-negative.
                    if let Some(d) = store.domain(p) {
                        if d.lo < 0.0 {
                            violations.push(format!(
                                "gm literal for `{var}`: weight parameter `_{p}` has domain \
                                 [{}, {}] allowing negative values",
                                d.lo, d.hi
                            ));
                        }
                    }
                }
            }
        }
        if all_lit && (lit_sum - 1.0).abs() > 1e-9 {
            violations.push(format!("gm literal for `{var}`: weights sum to {lit_sum}"));
        }
        if !param_names.is_empty() && param_names.iter().all(|p| store.value(p).is_some()) {
            store.add_simplex_group(param_names, lit_sum);
        }
        for s in &gm.stds {
            match s {
                Value::Lit(v) => {
                    if *v < 0.0 {
                        violations.push(format!("gm literal for `{var}`: negative std {v}"));
                    }
                }
                Value::Param(p) => {
                    if let Some(d) = store.domain(p) {
                        if d.lo < 0.0 {
                            violations.push(format!(
                                "gm literal for `{var}`: std parameter `_{p}` has domain \
                                 [{}, {}] allowing negative values",
                                d.lo, d.hi
                            ));
                        }
                    }
                }
            }
        }
    }

    fn walk(stmts: &[Stmt], violations: &mut Vec<String>, store: &mut ParamStore) {
        for s in stmts {
            match s {
                Stmt::RndAssign { var, gm } => check_gm(gm, var, violations, store),
                Stmt::If { then_body, else_body, .. } => {
                    walk(then_body, violations, store);
                    walk(else_body, violations, store);
                }
                _ => {}
            }
        }
    }
    let body = std::mem::take(&mut ast.body);
    walk(&body, &mut violations, &mut store);
    ast.body = body;

    if !violations.is_empty() {
        return Err(FrontendError::Validation { violations });
    }
    ast.params = decls;
    Ok((ast, store))
}

/// Canonical source text for an AST; `parse(pretty(ast))` reproduces it.
pub fn pretty(ast: &Ast) -> String {
    let mut out = String::new();
    fn value(v: &Value) -> String {
        match v {
            Value::Lit(x) => format!("{x}"),
            Value::Param(p) => format!("_{p}"),
        }
    }
    fn list(vs: &[Value]) -> String {
        let inner: Vec<String> = vs.iter().map(value).collect();
        format!("[{}]", inner.join(", "))
    }
    fn pred(p: &Pred) -> String {
        match p {
            Pred::True => "true".into(),
            Pred::False => "false".into(),
            Pred::Cmp { var, op, bound } => format!("{var} {} {}", op.symbol(), value(bound)),
        }
    }
    fn expr(e: &Expr) -> String {
        match e {
            Expr::Product(a, b) => format!("{a} * {b}"),
            Expr::Linear { terms, constant } => {
                let mut parts: Vec<String> = Vec::new();
                for (coef, var) in terms {
                    match coef {
                        Value::Lit(v) if *v == 1.0 => parts.push(var.clone()),
                        _ => parts.push(format!("{} * {var}", value(coef))),
                    }
                }
                let skip_const = matches!(constant, Value::Lit(v) if *v == 0.0) && !parts.is_empty();
                if !skip_const {
                    parts.push(value(constant));
                }
                let mut s = String::new();
                for (i, p) in parts.iter().enumerate() {
                    if i == 0 {
                        s.push_str(p);
                    } else if let Some(stripped) = p.strip_prefix('-') {
                        // Render a negative literal as subtraction.
                        write!(s, " - {stripped}").unwrap();
                    } else {
                        write!(s, " + {p}").unwrap();
                    }
                }
                s
            }
        }
    }
    fn stmts(body: &[Stmt], indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        for s in body {
            match s {
                Stmt::Skip => writeln!(out, "{pad}skip;").unwrap(),
                Stmt::Assign { var, expr: e } => writeln!(out, "{pad}{var} = {};", expr(e)).unwrap(),
                Stmt::RndAssign { var, gm } => writeln!(
                    out,
                    "{pad}{var} = gm({}, {}, {});",
                    list(&gm.weights),
                    list(&gm.means),
                    list(&gm.stds)
                )
                .unwrap(),
                Stmt::If { guard, then_body, else_body } => {
                    writeln!(out, "{pad}if ({}) {{", pred(guard)).unwrap();
                    stmts(then_body, indent + 1, out);
                    if else_body.is_empty() {
                        writeln!(out, "{pad}}}").unwrap();
                    } else {
                        writeln!(out, "{pad}}} else {{").unwrap();
                        stmts(else_body, indent + 1, out);
                        writeln!(out, "{pad}}}").unwrap();
                    }
                }
                Stmt::Observe(p) => writeln!(out, "{pad}observe({});", pred(p)).unwrap(),
            }
        }
    }
    stmts(&ast.body, 0, &mut out);
    out
}
