//! Control-flow graph construction and path enumeration.
//!
//! Statements lower to six node kinds: `entry`, `det`, `rnd`, `test`,
//! `observe`, `exit`. A test node has exactly two children, and the first
//! node of each branch is a `det` or `rnd` node carrying the branch
//! condition; a `skip` carrier is inserted when a branch starts with
//! anything else (or is empty). Both branch tails point at the statement
//! following the `if`, so the join is implicit in the edge structure.

use thiserror::Error;

use crate::diff::{DiffScalar, ParamStore};
use crate::frontend::{Ast, CmpOp, Expr, Pred, Stmt, Value};

pub const DEFAULT_MAX_PATHS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CfgError {
    #[error("path count exceeds the budget of {limit} paths")]
    PathBudgetExceeded { limit: usize },
    #[error("node {node} is not on the path")]
    NotOnPath { node: usize },
}

/// A literal or parameter reference, resolved to a variable-free value.
#[derive(Debug, Clone, PartialEq)]
pub enum RVal {
    Lit(f64),
    Param(String),
}

impl RVal {
    fn from_value(v: &Value) -> Self {
        match v {
            Value::Lit(x) => RVal::Lit(*x),
            Value::Param(p) => RVal::Param(p.clone()),
        }
    }

    /// The current tape scalar for this value.
    pub fn resolve(&self, params: &ParamStore) -> DiffScalar {
        match self {
            RVal::Lit(x) => DiffScalar::constant(*x),
            RVal::Param(p) => params
                .leaf(p)
                .unwrap_or_else(|| panic!("parameter `{p}` missing from store")),
        }
    }

    /// Plain value without touching the tape.
    pub fn value(&self, params: &ParamStore) -> f64 {
        match self {
            RVal::Lit(x) => *x,
            RVal::Param(p) => params
                .value(p)
                .unwrap_or_else(|| panic!("parameter `{p}` missing from store")),
        }
    }

    fn label(&self) -> String {
        match self {
            RVal::Lit(x) => format!("{x}"),
            RVal::Param(p) => format!("_{p}"),
        }
    }
}

/// Payload of a `det` node.
#[derive(Debug, Clone, PartialEq)]
pub enum DetArg {
    Skip,
    Linear {
        target: usize,
        terms: Vec<(RVal, usize)>,
        constant: RVal,
    },
    Product {
        target: usize,
        a: usize,
        b: usize,
    },
}

/// Payload of a `rnd` node.
#[derive(Debug, Clone, PartialEq)]
pub struct RndArg {
    pub var: usize,
    pub weights: Vec<RVal>,
    pub means: Vec<RVal>,
    pub stds: Vec<RVal>,
}

/// Payload of `test` and `observe` nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum PredArg {
    True,
    False,
    Cmp { var: usize, op: CmpOp, bound: RVal },
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Entry,
    Det(DetArg),
    Rnd(RndArg),
    Test(PredArg),
    Observe(PredArg),
    Exit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfgNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Branch condition carried by the first node of a test branch.
    pub cond: Option<bool>,
}

/// One entry-to-exit node sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Cfg {
    pub nodes: Vec<CfgNode>,
    children: Vec<Vec<usize>>,
    pub entry: usize,
    pub exit: usize,
    pub var_names: Vec<String>,
}

impl Cfg {
    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn n_tests(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Test(_)))
            .count()
    }

    /// All edges as `(parent, child)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (p, cs) in self.children.iter().enumerate() {
            for &c in cs {
                out.push((p, c));
            }
        }
        out
    }

    /// Graphviz rendering for debugging.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph cfg {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let label = match &n.kind {
                NodeKind::Entry => "entry".to_string(),
                NodeKind::Exit => "exit".to_string(),
                NodeKind::Det(DetArg::Skip) => "det: skip".to_string(),
                NodeKind::Det(DetArg::Linear { target, terms, constant }) => {
                    let mut parts: Vec<String> = terms
                        .iter()
                        .map(|(c, v)| format!("{}*{}", c.label(), self.var_names[*v]))
                        .collect();
                    parts.push(constant.label());
                    format!("det: {} = {}", self.var_names[*target], parts.join(" + "))
                }
                NodeKind::Det(DetArg::Product { target, a, b }) => format!(
                    "det: {} = {} * {}",
                    self.var_names[*target], self.var_names[*a], self.var_names[*b]
                ),
                NodeKind::Rnd(r) => format!("rnd: {}", self.var_names[r.var]),
                NodeKind::Test(p) => format!("test: {}", pred_label(p, &self.var_names)),
                NodeKind::Observe(p) => format!("observe: {}", pred_label(p, &self.var_names)),
            };
            let cond = match n.cond {
                Some(b) => format!("\\ncond={b}"),
                None => String::new(),
            };
            s.push_str(&format!("  n{} [label=\"{}{}\"];\n", n.id, label, cond));
        }
        for (p, c) in self.edges() {
            s.push_str(&format!("  n{p} -> n{c};\n"));
        }
        s.push_str("}\n");
        s
    }
}

fn pred_label(p: &PredArg, vars: &[String]) -> String {
    match p {
        PredArg::True => "true".into(),
        PredArg::False => "false".into(),
        PredArg::Cmp { var, op, bound } => {
            format!("{} {} {}", vars[*var], op.symbol(), bound.label())
        }
    }
}

struct Builder {
    nodes: Vec<CfgNode>,
    children: Vec<Vec<usize>>,
}

impl Builder {
    fn add(&mut self, kind: NodeKind, cond: Option<bool>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(CfgNode { id, kind, cond });
        self.children.push(Vec::new());
        id
    }

    fn connect(&mut self, frontier: &[usize], to: usize) {
        for &f in frontier {
            self.children[f].push(to);
        }
    }

    fn lower(&mut self, ast: &Ast, stmts: &[Stmt], frontier: Vec<usize>, mut first_cond: Option<bool>) -> Vec<usize> {
        let mut frontier = frontier;
        for stmt in stmts {
            match stmt {
                Stmt::Skip => {
                    let v = self.add(NodeKind::Det(DetArg::Skip), first_cond.take());
                    self.connect(&frontier, v);
                    frontier = vec![v];
                }
                Stmt::Assign { var, expr } => {
                    let target = ast.var_index(var).expect("declared variable");
                    let arg = match expr {
                        Expr::Product(a, b) => DetArg::Product {
                            target,
                            a: ast.var_index(a).expect("declared variable"),
                            b: ast.var_index(b).expect("declared variable"),
                        },
                        Expr::Linear { terms, constant } => DetArg::Linear {
                            target,
                            terms: terms
                                .iter()
                                .map(|(c, v)| {
                                    (RVal::from_value(c), ast.var_index(v).expect("declared variable"))
                                })
                                .collect(),
                            constant: RVal::from_value(constant),
                        },
                    };
                    let v = self.add(NodeKind::Det(arg), first_cond.take());
                    self.connect(&frontier, v);
                    frontier = vec![v];
                }
                Stmt::RndAssign { var, gm } => {
                    let arg = RndArg {
                        var: ast.var_index(var).expect("declared variable"),
                        weights: gm.weights.iter().map(RVal::from_value).collect(),
                        means: gm.means.iter().map(RVal::from_value).collect(),
                        stds: gm.stds.iter().map(RVal::from_value).collect(),
                    };
                    let v = self.add(NodeKind::Rnd(arg), first_cond.take());
                    self.connect(&frontier, v);
                    frontier = vec![v];
                }
                Stmt::Observe(p) => {
                    debug_assert!(first_cond.is_none(), "observe cannot carry a branch condition");
                    let v = self.add(NodeKind::Observe(lower_pred(ast, p)), None);
                    self.connect(&frontier, v);
                    frontier = vec![v];
                }
                Stmt::If { guard, then_body, else_body } => {
                    // A test node cannot itself carry a branch condition.
                    if let Some(c) = first_cond.take() {
                        let v = self.add(NodeKind::Det(DetArg::Skip), Some(c));
                        self.connect(&frontier, v);
                        frontier = vec![v];
                    }
                    let t = self.add(NodeKind::Test(lower_pred(ast, guard)), None);
                    self.connect(&frontier, t);
                    let mut then_f = self.lower_branch(ast, then_body, t, true);
                    let else_f = self.lower_branch(ast, else_body, t, false);
                    then_f.extend(else_f);
                    frontier = then_f;
                }
            }
        }
        frontier
    }

    fn lower_branch(&mut self, ast: &Ast, stmts: &[Stmt], test: usize, cond: bool) -> Vec<usize> {
        let head_carries = matches!(
            stmts.first(),
            Some(Stmt::Skip | Stmt::Assign { .. } | Stmt::RndAssign { .. })
        );
        if head_carries {
            self.lower(ast, stmts, vec![test], Some(cond))
        } else {
            let v = self.add(NodeKind::Det(DetArg::Skip), Some(cond));
            self.connect(&[test], v);
            self.lower(ast, stmts, vec![v], None)
        }
    }
}

fn lower_pred(ast: &Ast, p: &Pred) -> PredArg {
    match p {
        Pred::True => PredArg::True,
        Pred::False => PredArg::False,
        Pred::Cmp { var, op, bound } => PredArg::Cmp {
            var: ast.var_index(var).expect("declared variable"),
            op: *op,
            bound: RVal::from_value(bound),
        },
    }
}

/// Lowers a validated AST to its control-flow graph.
pub fn build_cfg(ast: &Ast) -> Cfg {
    let mut b = Builder {
        nodes: Vec::new(),
        children: Vec::new(),
    };
    let entry = b.add(NodeKind::Entry, None);
    let frontier = b.lower(ast, &ast.body, vec![entry], None);
    let exit = b.add(NodeKind::Exit, None);
    b.connect(&frontier, exit);
    Cfg {
        nodes: b.nodes,
        children: b.children,
        entry,
        exit,
        var_names: ast.var_names.clone(),
    }
}

/// Number of entry-to-exit paths, saturating at `cap`.
fn count_paths(cfg: &Cfg, cap: usize) -> usize {
    let mut memo = vec![0usize; cfg.nodes.len()];
    // The graph is acyclic with ids only pointing forward except for the
    // exit node, which is appended last; walk ids in reverse.
    memo[cfg.exit] = 1;
    for id in (0..cfg.nodes.len()).rev() {
        if id == cfg.exit {
            continue;
        }
        let mut c = 0usize;
        for &ch in cfg.children(id) {
            c = c.saturating_add(memo[ch]);
        }
        memo[id] = c.min(cap);
    }
    memo[cfg.entry]
}

/// Every entry-to-exit path in depth-first order, true branch first.
pub fn enumerate_paths(cfg: &Cfg, max_paths: usize) -> Result<Vec<Path>, CfgError> {
    if count_paths(cfg, max_paths.saturating_add(1)) > max_paths {
        return Err(CfgError::PathBudgetExceeded { limit: max_paths });
    }
    let mut out = Vec::new();
    let mut stack = vec![cfg.entry];
    dfs(cfg, &mut stack, &mut out);
    Ok(out)
}

fn dfs(cfg: &Cfg, stack: &mut Vec<usize>, out: &mut Vec<Path>) {
    let last = *stack.last().unwrap();
    if last == cfg.exit {
        out.push(Path {
            nodes: stack.clone(),
        });
        return;
    }
    for &ch in cfg.children(last) {
        stack.push(ch);
        dfs(cfg, stack, out);
        stack.pop();
    }
}

/// The node after `node` on `path`.
pub fn successor(path: &Path, node: usize) -> Result<usize, CfgError> {
    let pos = path
        .nodes
        .iter()
        .position(|&n| n == node)
        .ok_or(CfgError::NotOnPath { node })?;
    path.nodes
        .get(pos + 1)
        .copied()
        .ok_or(CfgError::NotOnPath { node })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse;

    const FIG2: &str = "x = gm([1.], [0.], [_sigma]);\nif (x < _theta) { y = 1.; } else { y = -1.; }\n";

    #[test]
    fn fig2_has_six_nodes_and_two_paths() {
        let cfg = build_cfg(&parse(FIG2).unwrap());
        assert_eq!(cfg.nodes.len(), 6);
        assert!(matches!(cfg.nodes[0].kind, NodeKind::Entry));
        assert!(matches!(cfg.nodes[1].kind, NodeKind::Rnd(_)));
        assert!(matches!(cfg.nodes[2].kind, NodeKind::Test(_)));
        assert_eq!(cfg.nodes[3].cond, Some(true));
        assert_eq!(cfg.nodes[4].cond, Some(false));
        let paths = enumerate_paths(&cfg, DEFAULT_MAX_PATHS).unwrap();
        assert_eq!(paths.len(), 2);
        // True branch first.
        assert_eq!(paths[0].nodes, vec![0, 1, 2, 3, 5]);
        assert_eq!(paths[1].nodes, vec![0, 1, 2, 4, 5]);
    }

    #[test]
    fn skip_program_is_three_nodes() {
        let cfg = build_cfg(&parse("skip;").unwrap());
        assert_eq!(cfg.nodes.len(), 3);
        let paths = enumerate_paths(&cfg, 16).unwrap();
        assert_eq!(paths.len(), 1);
    }

    #[test]
    fn sequential_ifs_double_paths() {
        for k in 1..=6 {
            let src: String = (0..k)
                .map(|i| format!("if (x{i} > 0) {{ y = 1.; }} else {{ y = 0.; }}\n"))
                .collect();
            let cfg = build_cfg(&parse(&src).unwrap());
            let paths = enumerate_paths(&cfg, DEFAULT_MAX_PATHS).unwrap();
            assert_eq!(paths.len(), 1 << k, "k = {k}");
        }
    }

    #[test]
    fn nested_if_inserts_carrier_and_counts_paths() {
        let src = "if (a > 0) { if (b > 0) { y = 1.; } else { y = 2.; } } else { y = 3.; }";
        let cfg = build_cfg(&parse(src).unwrap());
        // The inner test cannot carry cond=true, so a skip det is inserted.
        let carriers = cfg
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Det(DetArg::Skip)))
            .count();
        assert_eq!(carriers, 1);
        assert_eq!(enumerate_paths(&cfg, 64).unwrap().len(), 3);
        // cond is present exactly on children of test nodes.
        for (p, c) in cfg.edges() {
            let parent_is_test = matches!(cfg.nodes[p].kind, NodeKind::Test(_));
            assert_eq!(cfg.nodes[c].cond.is_some(), parent_is_test);
        }
    }

    #[test]
    fn empty_else_gets_skip_carrier() {
        let cfg = build_cfg(&parse("if (x > 0) { y = 1.; }").unwrap());
        let paths = enumerate_paths(&cfg, 16).unwrap();
        assert_eq!(paths.len(), 2);
        let false_head = paths[1].nodes[2];
        assert_eq!(cfg.nodes[false_head].cond, Some(false));
        assert!(matches!(cfg.nodes[false_head].kind, NodeKind::Det(DetArg::Skip)));
    }

    #[test]
    fn path_edges_cover_cfg_edges() {
        let src = "x = gm([1.], [0.], [1.]);\nif (x > 0) { y = x + 1.; } else { if (x < -1) { y = 0.; } }\nobserve(y >= 0);";
        let cfg = build_cfg(&parse(src).unwrap());
        let paths = enumerate_paths(&cfg, 64).unwrap();
        let mut covered: Vec<(usize, usize)> = Vec::new();
        for p in &paths {
            for w in p.nodes.windows(2) {
                covered.push((w[0], w[1]));
            }
            // Each test node appears at most once per path.
            let tests: Vec<_> = p
                .nodes
                .iter()
                .filter(|&&n| matches!(cfg.nodes[n].kind, NodeKind::Test(_)))
                .collect();
            let mut dedup = tests.clone();
            dedup.dedup();
            assert_eq!(tests.len(), dedup.len());
        }
        covered.sort_unstable();
        covered.dedup();
        let mut edges = cfg.edges();
        edges.sort_unstable();
        assert_eq!(covered, edges);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let src = "if (a > 0) { b = 1.; } else { b = 2.; }\nif (b > 1) { c = 1.; }";
        let cfg = build_cfg(&parse(src).unwrap());
        let p1 = enumerate_paths(&cfg, 64).unwrap();
        let p2 = enumerate_paths(&cfg, 64).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn budget_is_enforced() {
        let src: String = (0..13)
            .map(|i| format!("if (x{i} > 0) {{ y = 1.; }} else {{ y = 0.; }}\n"))
            .collect();
        let cfg = build_cfg(&parse(&src).unwrap());
        assert_eq!(
            enumerate_paths(&cfg, DEFAULT_MAX_PATHS),
            Err(CfgError::PathBudgetExceeded { limit: DEFAULT_MAX_PATHS })
        );
    }

    #[test]
    fn successor_walks_the_path() {
        let cfg = build_cfg(&parse(FIG2).unwrap());
        let paths = enumerate_paths(&cfg, 16).unwrap();
        let true_path = &paths[0];
        assert_eq!(successor(true_path, 0).unwrap(), 1);
        assert_eq!(successor(true_path, 2).unwrap(), 3);
        assert_eq!(successor(true_path, 3).unwrap(), cfg.exit);
        assert_eq!(successor(true_path, cfg.exit), Err(CfgError::NotOnPath { node: cfg.exit }));
        assert_eq!(successor(true_path, 4), Err(CfgError::NotOnPath { node: 4 }));
    }

    #[test]
    fn dot_output_mentions_every_node() {
        let cfg = build_cfg(&parse(FIG2).unwrap());
        let dot = cfg.to_dot();
        assert!(dot.starts_with("digraph cfg {"));
        for n in &cfg.nodes {
            assert!(dot.contains(&format!("n{}", n.id)));
        }
    }
}
