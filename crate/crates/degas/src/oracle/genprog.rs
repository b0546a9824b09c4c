//! Seeded random program generator for property tests.
//!
//! Programs are valid by construction: every variable is initialized by a
//! random assignment, guards and inequality observations sit near the
//! tracked mean of a continuous variable (so both branches keep real mass),
//! and equality observations only target freshly drawn continuous
//! variables. `max_tests` bounds the total number of conditioning
//! statements (tests plus inequality observations), which keeps the
//! one-conditioning regime exactly representable by the mixture semantics.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::frontend::{pretty, Ast, CmpOp, Expr, GmLit, Pred, Stmt, Value};

#[derive(Debug, Clone)]
pub struct RandomProgramSpec {
    pub n_vars: usize,
    /// Total conditioning budget: tests plus inequality observations.
    pub max_tests: usize,
    pub allow_products: bool,
    pub allow_eq_observes: bool,
    pub allow_consts: bool,
    pub allow_discrete: bool,
    /// How many literals may be replaced by optimizable parameters.
    pub n_params: usize,
    pub seed: u64,
}

impl Default for RandomProgramSpec {
    fn default() -> Self {
        RandomProgramSpec {
            n_vars: 3,
            max_tests: 2,
            allow_products: true,
            allow_eq_observes: true,
            allow_consts: true,
            allow_discrete: true,
            n_params: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedProgram {
    /// Program source (round-trips through the frontend).
    pub source: String,
    /// Sidecar parameter file text.
    pub params: String,
}

struct Track {
    mean: f64,
    std: f64,
    discrete: bool,
}

struct Gen {
    rng: ChaCha20Rng,
    names: Vec<String>,
    track: Vec<Track>,
    params: Vec<(String, f64, f64, f64)>,
    param_budget: usize,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl Gen {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        round2(self.rng.gen_range(lo..hi))
    }

    /// Emits `value` either literally or through a fresh parameter.
    fn value(&mut self, value: f64, lo: f64, hi: f64) -> Value {
        if self.param_budget > 0 && self.rng.gen_bool(0.5) {
            self.param_budget -= 1;
            let name = format!("p{}", self.params.len());
            self.params.push((name.clone(), value, lo, hi));
            Value::Param(name)
        } else {
            Value::Lit(value)
        }
    }

    fn continuous_vars(&self) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| !self.track[i].discrete).collect()
    }

    fn pick_continuous(&mut self) -> usize {
        let c = self.continuous_vars();
        c[self.rng.gen_range(0..c.len())]
    }

    fn rnd_stmt(&mut self, var: usize, discrete: bool) -> Stmt {
        let n_comp = if self.rng.gen_bool(0.5) { 2 } else { 1 };
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut mix_w = Vec::new();
        if n_comp == 2 {
            let w = self.uniform(0.25, 0.75);
            weights.push(Value::Lit(w));
            weights.push(Value::Lit(round2(1.0 - w)));
            mix_w = vec![w, 1.0 - w];
        } else {
            weights.push(Value::Lit(1.0));
            mix_w.push(1.0);
        }
        let mut m_acc = 0.0;
        let mut v_acc = 0.0;
        let mut raw_means = Vec::new();
        for w in mix_w.clone() {
            let m = self.uniform(-2.0, 2.0);
            raw_means.push((m, w));
            let s = if discrete { 0.0 } else { self.uniform(0.4, 1.5) };
            means.push(self.value(m, f64::NEG_INFINITY, f64::INFINITY));
            stds.push(if discrete || self.rng.gen_bool(0.7) {
                Value::Lit(s)
            } else {
                self.value(s, 1e-3, f64::INFINITY)
            });
            m_acc += w * m;
            v_acc += w * s * s;
        }
        for (m, w) in raw_means {
            v_acc += w * (m - m_acc) * (m - m_acc);
        }
        self.track[var] = Track {
            mean: m_acc,
            std: v_acc.sqrt().max(1e-3),
            discrete,
        };
        Stmt::RndAssign {
            var: self.names[var].clone(),
            gm: GmLit { weights, means, stds },
        }
    }

    fn linear_stmt(&mut self) -> Stmt {
        let target = self.rng.gen_range(0..self.names.len());
        let n_src = if self.rng.gen_bool(0.4) { 2 } else { 1 };
        let mut terms = Vec::new();
        let mut mean = 0.0;
        let mut var_acc = 0.0;
        let mut all_discrete = true;
        let mut used = Vec::new();
        for _ in 0..n_src {
            let src = loop {
                let s = self.rng.gen_range(0..self.names.len());
                if !used.contains(&s) {
                    break s;
                }
            };
            used.push(src);
            let mut c = self.uniform(-1.2, 1.2);
            if c.abs() < 0.1 {
                c = if c < 0.0 { c - 0.4 } else { c + 0.4 };
            }
            mean += c * self.track[src].mean;
            var_acc += c * c * self.track[src].std * self.track[src].std;
            all_discrete &= self.track[src].discrete;
            terms.push((self.value(c, f64::NEG_INFINITY, f64::INFINITY), self.names[src].clone()));
        }
        let k = self.uniform(-1.0, 1.0);
        mean += k;
        let constant = self.value(k, f64::NEG_INFINITY, f64::INFINITY);
        self.track[target] = Track {
            mean,
            std: var_acc.sqrt().max(1e-3),
            discrete: all_discrete,
        };
        Stmt::Assign {
            var: self.names[target].clone(),
            expr: Expr::Linear { terms, constant },
        }
    }

    fn const_stmt(&mut self) -> Stmt {
        let target = self.rng.gen_range(0..self.names.len());
        let k = self.uniform(-2.0, 2.0);
        self.track[target] = Track { mean: k, std: 1e-3, discrete: true };
        Stmt::Assign {
            var: self.names[target].clone(),
            expr: Expr::Linear {
                terms: vec![],
                constant: self.value(k, f64::NEG_INFINITY, f64::INFINITY),
            },
        }
    }

    fn product_stmt(&mut self) -> Stmt {
        let a = self.pick_continuous();
        let b = self.pick_continuous();
        let target = self.rng.gen_range(0..self.names.len());
        let (ma, sa) = (self.track[a].mean, self.track[a].std);
        let (mb, sb) = (self.track[b].mean, self.track[b].std);
        self.track[target] = Track {
            mean: ma * mb,
            std: (ma * ma * sb * sb + mb * mb * sa * sa + sa * sa * sb * sb).sqrt().max(1e-3),
            discrete: false,
        };
        Stmt::Assign {
            var: self.names[target].clone(),
            expr: Expr::Product(self.names[a].clone(), self.names[b].clone()),
        }
    }

    fn guard(&mut self) -> (Pred, usize) {
        let v = self.pick_continuous();
        let t = self.track[v].mean + self.track[v].std * self.uniform(-0.3, 0.3);
        let op = *[CmpOp::Lt, CmpOp::Le, CmpOp::Ge, CmpOp::Gt]
            .choose(&mut self.rng)
            .unwrap();
        let bound = self.value(round2(t), f64::NEG_INFINITY, f64::INFINITY);
        (Pred::Cmp { var: self.names[v].clone(), op, bound }, v)
    }

    fn if_stmt(&mut self) -> Stmt {
        let (pred, _) = self.guard();
        let then_body = vec![self.branch_stmt()];
        let else_body = if self.rng.gen_bool(0.7) {
            vec![self.branch_stmt()]
        } else {
            vec![Stmt::Skip]
        };
        Stmt::If { guard: pred, then_body, else_body }
    }

    /// Branch bodies stay linear over continuous sources so the
    /// discreteness of a variable does not depend on the path taken.
    fn branch_stmt(&mut self) -> Stmt {
        let target = self.rng.gen_range(0..self.names.len());
        let src = self.pick_continuous();
        let c = self.uniform(0.3, 1.2);
        let k = self.uniform(-1.0, 1.0);
        let old = &self.track[target];
        let new_mean = 0.5 * (old.mean + c * self.track[src].mean + k);
        self.track[target] = Track {
            mean: new_mean,
            std: (old.std.powi(2)).max(c * c * self.track[src].std.powi(2)).sqrt(),
            discrete: old.discrete && self.track[src].discrete,
        };
        Stmt::Assign {
            var: self.names[target].clone(),
            expr: Expr::Linear {
                terms: vec![(Value::Lit(c), self.names[src].clone())],
                constant: Value::Lit(k),
            },
        }
    }

    fn ineq_observe(&mut self) -> Stmt {
        let v = self.pick_continuous();
        let side = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let t = round2(self.track[v].mean + 0.5 * side * self.track[v].std);
        let op = if side > 0.0 { CmpOp::Le } else { CmpOp::Ge };
        // Rough post-conditioning update for later guard placement.
        self.track[v].mean -= 0.3 * side * self.track[v].std;
        self.track[v].std *= 0.9;
        Stmt::Observe(Pred::Cmp {
            var: self.names[v].clone(),
            op,
            bound: self.value(t, f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    /// Fresh draw immediately followed by an equality observation, the form
    /// the likelihood-weighting oracle supports exactly.
    fn eq_observe(&mut self, out: &mut Vec<Stmt>) {
        let v = self.rng.gen_range(0..self.names.len());
        out.push(self.rnd_stmt(v, false));
        let c = round2(self.track[v].mean + self.track[v].std * self.uniform(-0.5, 0.5));
        self.track[v] = Track { mean: c, std: 1e-3, discrete: true };
        out.push(Stmt::Observe(Pred::Cmp {
            var: self.names[v].clone(),
            op: CmpOp::Eq,
            bound: self.value(c, f64::NEG_INFINITY, f64::INFINITY),
        }));
    }
}

/// Deterministically generates one valid program from the spec.
pub fn gen_random_program(spec: &RandomProgramSpec) -> GeneratedProgram {
    assert!((1..=4).contains(&spec.n_vars), "n_vars must be 1..=4");
    assert!(spec.max_tests <= 3, "max_tests must be at most 3");
    let names: Vec<String> = ["a", "b", "c", "d"][..spec.n_vars]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut g = Gen {
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
        track: names.iter().map(|_| Track { mean: 0.0, std: 1.0, discrete: false }).collect(),
        names,
        params: Vec::new(),
        param_budget: spec.n_params,
    };

    let mut body = Vec::new();
    // Initialize every variable; at most one may be discrete.
    let discrete_slot = if spec.allow_discrete && g.rng.gen_bool(0.4) {
        Some(g.rng.gen_range(0..spec.n_vars))
    } else {
        None
    };
    for v in 0..spec.n_vars {
        let stmt = g.rnd_stmt(v, discrete_slot == Some(v));
        body.push(stmt);
    }

    let mut conditions_left = spec.max_tests;
    let mut eq_left = usize::from(spec.allow_eq_observes);
    let extra = g.rng.gen_range(2..=4);
    for _ in 0..extra {
        let roll: f64 = g.rng.gen();
        if roll < 0.35 {
            body.push(g.linear_stmt());
        } else if roll < 0.45 && spec.allow_consts {
            body.push(g.const_stmt());
        } else if roll < 0.55 && spec.allow_products {
            body.push(g.product_stmt());
        } else if roll < 0.65 && eq_left > 0 {
            eq_left -= 1;
            g.eq_observe(&mut body);
        } else if roll < 0.85 && conditions_left > 0 {
            conditions_left -= 1;
            if g.rng.gen_bool(0.6) {
                body.push(g.if_stmt());
            } else {
                body.push(g.ineq_observe());
            }
        } else {
            body.push(g.linear_stmt());
        }
    }
    // Guarantee at least one conditioning statement when the budget allows.
    if conditions_left == spec.max_tests && spec.max_tests > 0 {
        body.push(g.if_stmt());
    }

    let ast = Ast {
        var_names: g.names.clone(),
        params: Vec::new(),
        body,
    };
    let source = pretty(&ast);
    let mut params = String::new();
    for (name, init, lo, hi) in &g.params {
        let fmt = |x: f64| {
            if x == f64::INFINITY {
                "inf".to_string()
            } else if x == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                format!("{x}")
            }
        };
        params.push_str(&format!("{name} {init} {} {}\n", fmt(*lo), fmt(*hi)));
    }
    GeneratedProgram { source, params }
}
