use serde::{Deserialize, Serialize};

use super::gr1::{Game, Gr1Spec, Strategy};
use super::SafetyError;

pub const MAX_HORIZON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Init,
    Safety,
    Justice,
}

/// A counterexample: the environment inputs and the system valuations the
/// strategy produced (`sys[k]` is the valuation in force at step `k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub env: Vec<u32>,
    pub sys: Vec<u32>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CheckReport {
    pub safety: Option<Violation>,
    pub justice: Option<Violation>,
    pub words_checked: u64,
}

impl CheckReport {
    pub fn ok(&self) -> bool {
        self.safety.is_none() && self.justice.is_none()
    }
}

struct Dfs<'a> {
    g: &'a Game,
    strat: &'a Strategy,
    horizon: usize,
    env: Vec<u32>,
    sys: Vec<u32>,
    nodes: Vec<u32>,
    report: CheckReport,
}

impl Dfs<'_> {
    fn record(&mut self, kind: ViolationKind, detail: String) {
        let slot = match kind {
            ViolationKind::Justice => &mut self.report.justice,
            _ => &mut self.report.safety,
        };
        if slot.is_none() {
            *slot = Some(Violation { kind, env: self.env.clone(), sys: self.sys.clone(), detail });
        }
    }

    /// Looks for a repeated (node, input) pair closing an environment-fair
    /// loop on which some system goal never holds.
    fn check_lasso(&mut self) {
        let k = self.env.len() - 1;
        let key = (self.nodes[k], self.env[k]);
        let Some(i) = (0..k).find(|&i| (self.nodes[i], self.env[i]) == key) else {
            return;
        };
        let states: Vec<u32> = (i..k).map(|t| self.g.state(self.env[t], self.sys[t])).collect();
        let fair = self.g.env_justice.iter().all(|f| states.iter().any(|&s| Game::holds(f, s)));
        if !fair {
            return;
        }
        if let Some(j) =
            (0..self.g.sys_justice.len()).find(|&j| !states.iter().any(|&s| Game::holds(&self.g.sys_justice[j], s)))
        {
            self.record(
                ViolationKind::Justice,
                format!("fair loop over steps {i}..{k} never satisfies system goal {j}"),
            );
        }
    }

    fn visit(&mut self) {
        let k = self.env.len() - 1;
        let s = self.g.state(self.env[k], self.sys[k]);
        self.check_lasso();
        let Some(to) = self.strat.transition(self.nodes[k], self.env[k]) else {
            self.record(ViolationKind::Safety, format!("strategy has no move at step {k}"));
            self.report.words_checked += 1;
            return;
        };
        let y2 = self.strat.node_sys(to);
        let allowed: Vec<u32> = (0..self.g.env_count() as u32).filter(|&e2| self.g.env_trans_ok(s, e2)).collect();
        for &e2 in &allowed {
            if !self.g.sys_trans_ok(s, self.g.state(e2, y2)) {
                self.record(
                    ViolationKind::Safety,
                    format!("transition guarantee fails between steps {k} and {}", k + 1),
                );
            }
        }
        if k + 1 == self.horizon || allowed.is_empty() {
            self.report.words_checked += 1;
            return;
        }
        for e2 in allowed {
            self.env.push(e2);
            self.sys.push(y2);
            self.nodes.push(to);
            self.visit();
            self.env.pop();
            self.sys.pop();
            self.nodes.pop();
        }
    }
}

/// Runs `strategy` on every assumption-respecting input word of length
/// `horizon` and checks the system guarantees step by step, plus the
/// justice goals on every closed loop found along the way.
pub fn bounded_check(strategy: &Strategy, spec: &Gr1Spec, horizon: usize) -> Result<CheckReport, SafetyError> {
    if horizon == 0 || horizon > MAX_HORIZON {
        return Err(SafetyError::Horizon { horizon, max: MAX_HORIZON });
    }
    let g = Game::new(spec)?;
    if strategy.env_vars != spec.env_vars || strategy.sys_vars != spec.sys_vars {
        return Err(SafetyError::Spec("strategy and spec declare different variables".into()));
    }
    let mut dfs = Dfs {
        g: &g,
        strat: strategy,
        horizon,
        env: Vec::new(),
        sys: Vec::new(),
        nodes: Vec::new(),
        report: CheckReport::default(),
    };
    for e0 in 0..g.env_count() as u32 {
        if !g.env_init_ok(e0) {
            continue;
        }
        dfs.env = vec![e0];
        let Some(start) = strategy.initial[e0 as usize] else {
            dfs.sys = vec![];
            dfs.record(ViolationKind::Init, "no initial node".into());
            continue;
        };
        dfs.sys = vec![strategy.node_sys(start)];
        dfs.nodes = vec![start];
        if !g.sys_init_ok(g.state(e0, dfs.sys[0])) {
            dfs.record(ViolationKind::Init, "initial valuation violates the system initial condition".into());
        }
        dfs.visit();
    }
    Ok(dfs.report)
}
