//! Explicit-state GR(1) games.
//!
//! A state is a valuation of all declared variables, packed as
//! `env bits | sys bits << env_count`. Each round the system picks its next
//! valuation knowing the current state but not the next environment
//! valuation; the environment then moves subject to its transition
//! assumptions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::formula::Formula;
use super::SafetyError;

/// Largest explicit state space accepted by the solver.
pub const STATE_CAP: usize = 1 << 20;
/// Largest number of (state, system move) pairs enumerated.
pub const MOVE_CAP: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gr1Spec {
    pub env_vars: Vec<String>,
    pub sys_vars: Vec<String>,
    #[serde(default)]
    pub env_init: Vec<Formula>,
    #[serde(default)]
    pub env_trans: Vec<Formula>,
    pub env_justice: Vec<Formula>,
    #[serde(default)]
    pub sys_init: Vec<Formula>,
    #[serde(default)]
    pub sys_trans: Vec<Formula>,
    pub sys_justice: Vec<Formula>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Env,
    Sys,
}

impl Gr1Spec {
    pub fn from_json(text: &str) -> Result<Self, SafetyError> {
        let spec: Gr1Spec = serde_json::from_str(text).map_err(|e| SafetyError::SpecFile(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        crate::jsonfmt::to_string_pretty(self).expect("spec serializes")
    }

    fn side_of(&self, name: &str) -> Option<Side> {
        if self.env_vars.iter().any(|v| v == name) {
            Some(Side::Env)
        } else if self.sys_vars.iter().any(|v| v == name) {
            Some(Side::Sys)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        let mut seen = std::collections::BTreeSet::new();
        for v in self.env_vars.iter().chain(&self.sys_vars) {
            if !seen.insert(v.as_str()) {
                return Err(SafetyError::Spec(format!("variable {v} declared twice")));
            }
            if matches!(v.as_str(), "true" | "false") {
                return Err(SafetyError::Spec(format!("{v} is reserved")));
            }
        }
        if self.env_justice.is_empty() || self.sys_justice.is_empty() {
            return Err(SafetyError::Spec("justice sets must be non-empty (use \"true\")".into()));
        }
        let groups: [(&str, &[Formula], bool, bool); 6] = [
            ("env_init", &self.env_init, false, false),
            ("env_trans", &self.env_trans, true, false),
            ("env_justice", &self.env_justice, false, true),
            ("sys_init", &self.sys_init, false, true),
            ("sys_trans", &self.sys_trans, true, true),
            ("sys_justice", &self.sys_justice, false, true),
        ];
        for (group, formulas, primes_ok, sys_ok) in groups {
            for f in formulas {
                for (name, primed) in f.vars() {
                    let side = self
                        .side_of(name)
                        .ok_or_else(|| SafetyError::Spec(format!("{group}: undeclared variable {name} in {f}")))?;
                    if primed && !primes_ok {
                        return Err(SafetyError::Spec(format!("{group}: primed variable {name}' not allowed in {f}")));
                    }
                    if side == Side::Sys && !sys_ok && (group == "env_init" || primed) {
                        return Err(SafetyError::Spec(format!("{group}: system variable {name} not allowed in {f}")));
                    }
                    if group == "env_trans" && side == Side::Sys && primed {
                        return Err(SafetyError::Spec(format!(
                            "{group}: next system value {name}' not allowed in {f}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A formula with variables resolved to bit positions of a packed word
/// (current state in the low bits, next state shifted by the variable count).
#[derive(Debug, Clone)]
pub(crate) enum Compiled {
    Const(bool),
    Bit(u32),
    Not(Box<Compiled>),
    And(Box<Compiled>, Box<Compiled>),
    Or(Box<Compiled>, Box<Compiled>),
    Implies(Box<Compiled>, Box<Compiled>),
}

impl Compiled {
    fn eval(&self, w: u64) -> bool {
        match self {
            Compiled::Const(b) => *b,
            Compiled::Bit(i) => (w >> i) & 1 == 1,
            Compiled::Not(a) => !a.eval(w),
            Compiled::And(a, b) => a.eval(w) && b.eval(w),
            Compiled::Or(a, b) => a.eval(w) || b.eval(w),
            Compiled::Implies(a, b) => !a.eval(w) || b.eval(w),
        }
    }
}

/// The spec lowered onto packed valuations.
pub(crate) struct Game {
    pub n_env: u32,
    pub n_sys: u32,
    env_init: Vec<Compiled>,
    env_trans: Vec<Compiled>,
    pub env_justice: Vec<Compiled>,
    sys_init: Vec<Compiled>,
    sys_trans: Vec<Compiled>,
    pub sys_justice: Vec<Compiled>,
}

fn all(fs: &[Compiled], w: u64) -> bool {
    fs.iter().all(|f| f.eval(w))
}

impl Game {
    pub fn new(spec: &Gr1Spec) -> Result<Self, SafetyError> {
        spec.validate()?;
        let n_vars = spec.env_vars.len() + spec.sys_vars.len();
        if n_vars > 20 || (1usize << n_vars) > STATE_CAP {
            return Err(SafetyError::StateCap { vars: n_vars, cap: STATE_CAP });
        }
        let mut index = BTreeMap::new();
        for (i, v) in spec.env_vars.iter().chain(&spec.sys_vars).enumerate() {
            index.insert(v.as_str(), i as u32);
        }
        let n = n_vars as u32;
        let compile_all = |fs: &[Formula]| fs.iter().map(|f| compile(f, &index, n)).collect::<Vec<_>>();
        Ok(Self {
            n_env: spec.env_vars.len() as u32,
            n_sys: spec.sys_vars.len() as u32,
            env_init: compile_all(&spec.env_init),
            env_trans: compile_all(&spec.env_trans),
            env_justice: compile_all(&spec.env_justice),
            sys_init: compile_all(&spec.sys_init),
            sys_trans: compile_all(&spec.sys_trans),
            sys_justice: compile_all(&spec.sys_justice),
        })
    }

    pub fn env_count(&self) -> usize {
        1 << self.n_env
    }

    pub fn sys_count(&self) -> usize {
        1 << self.n_sys
    }

    pub fn state_count(&self) -> usize {
        1 << (self.n_env + self.n_sys)
    }

    pub fn state(&self, e: u32, y: u32) -> u32 {
        e | (y << self.n_env)
    }

    fn word(&self, s: u32, next: u32) -> u64 {
        s as u64 | ((next as u64) << (self.n_env + self.n_sys))
    }

    pub fn env_init_ok(&self, e: u32) -> bool {
        all(&self.env_init, e as u64)
    }

    pub fn sys_init_ok(&self, s: u32) -> bool {
        all(&self.sys_init, s as u64)
    }

    /// Environment assumption for moving from `s` to next env value `e2`
    /// (system part of the next state is irrelevant by validation).
    pub fn env_trans_ok(&self, s: u32, e2: u32) -> bool {
        all(&self.env_trans, self.word(s, e2))
    }

    pub fn sys_trans_ok(&self, s: u32, s2: u32) -> bool {
        all(&self.sys_trans, self.word(s, s2))
    }

    pub fn holds(f: &Compiled, s: u32) -> bool {
        f.eval(s as u64)
    }
}

fn compile(f: &Formula, index: &BTreeMap<&str, u32>, n: u32) -> Compiled {
    let b = |x: &Formula| Box::new(compile(x, index, n));
    match f {
        Formula::Const(v) => Compiled::Const(*v),
        Formula::Var { name, primed } => Compiled::Bit(index[name.as_str()] + if *primed { n } else { 0 }),
        Formula::Not(a) => Compiled::Not(b(a)),
        Formula::And(x, y) => Compiled::And(b(x), b(y)),
        Formula::Or(x, y) => Compiled::Or(b(x), b(y)),
        Formula::Implies(x, y) => Compiled::Implies(b(x), b(y)),
    }
}

type Set = Vec<bool>;

/// For every state, the legal system moves in increasing valuation order,
/// each with the successor states the environment may then pick.
struct Moves {
    per_state: Vec<Vec<(u32, Vec<u32>)>>,
}

impl Moves {
    fn build(g: &Game) -> Result<Self, SafetyError> {
        let n = g.state_count();
        if n.saturating_mul(g.sys_count()) > MOVE_CAP {
            return Err(SafetyError::StateCap { vars: (g.n_env + g.n_sys) as usize, cap: STATE_CAP });
        }
        let mut per_state = Vec::with_capacity(n);
        for s in 0..n as u32 {
            let env_next: Vec<u32> = (0..g.env_count() as u32).filter(|&e2| g.env_trans_ok(s, e2)).collect();
            let mut moves = Vec::new();
            for y2 in 0..g.sys_count() as u32 {
                let succ: Vec<u32> = env_next.iter().map(|&e2| g.state(e2, y2)).collect();
                if succ.iter().all(|&s2| g.sys_trans_ok(s, s2)) {
                    moves.push((y2, succ));
                }
            }
            per_state.push(moves);
        }
        Ok(Self { per_state })
    }

    fn cpre(&self, t: &Set) -> Set {
        self.per_state.iter().map(|ms| ms.iter().any(|(_, succ)| succ.iter().all(|&q| t[q as usize]))).collect()
    }

    /// Lowest system move from `s` whose successors all lie in `t`.
    fn pick(&self, s: u32, t: &Set) -> Option<u32> {
        self.per_state[s as usize].iter().find(|(_, succ)| succ.iter().all(|&q| t[q as usize])).map(|(y, _)| *y)
    }
}

fn or(a: &Set, b: &Set) -> Set {
    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
}

/// Fixpoint layers for one system goal.
struct GoalLayers {
    /// `y[r]` for r ≥ 1; index 0 is the empty set.
    y: Vec<Set>,
    /// `x[r][i]` for each layer and environment justice index.
    x: Vec<Vec<Set>>,
}

fn goal_layers(g: &Game, mv: &Moves, z: &Set, j: usize) -> GoalLayers {
    let n = z.len();
    let cz = mv.cpre(z);
    let start: Set = (0..n).map(|s| cz[s] && Game::holds(&g.sys_justice[j], s as u32)).collect();
    let mut ys = vec![vec![false; n]];
    let mut xs = vec![Vec::new()];
    loop {
        let prev = ys.last().unwrap();
        let base = or(&start, &mv.cpre(prev));
        let mut layer = vec![false; n];
        let mut layer_x = Vec::new();
        for ej in &g.env_justice {
            let mut x = z.clone();
            loop {
                let cx = mv.cpre(&x);
                let next: Set = (0..n).map(|s| base[s] || (!Game::holds(ej, s as u32) && cx[s])).collect();
                if next == x {
                    break;
                }
                x = next;
            }
            layer = or(&layer, &x);
            layer_x.push(x);
        }
        if &layer == prev {
            return GoalLayers { y: ys, x: xs };
        }
        ys.push(layer);
        xs.push(layer_x);
    }
}

fn winning_region(g: &Game, mv: &Moves) -> Set {
    let mut z = vec![true; g.state_count()];
    loop {
        let before = z.clone();
        for j in 0..g.sys_justice.len() {
            z = goal_layers(g, mv, &z, j).y.pop().unwrap();
        }
        if z == before {
            return z;
        }
    }
}

/// Outcome of synthesis.
#[derive(Debug, Clone, PartialEq)]
pub enum Synthesis {
    Realizable(Strategy),
    Unrealizable(String),
}

impl Synthesis {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Synthesis::Realizable(s) => Some(s),
            Synthesis::Unrealizable(_) => None,
        }
    }
}

/// Runtime position in a strategy: the current node plus the previous game
/// state, used to check the environment transition assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecState {
    pub node: u32,
    pub prev: Option<u32>,
}

/// Mealy machine over nodes `(sys valuation, goal)`: on input `e` in node
/// `(y, j)` it moves to `(y', j')` and outputs `y'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub env_vars: Vec<String>,
    pub sys_vars: Vec<String>,
    pub goals: usize,
    /// Start node per environment valuation (`None` if it violates the
    /// initial assumption).
    pub initial: Vec<Option<u32>>,
    /// `next[node * env_count + e]`.
    pub next: Vec<Option<u32>>,
    env_init: Vec<bool>,
    /// `env_ok[s * env_count + e]`.
    env_ok: Vec<bool>,
}

impl Strategy {
    pub fn env_count(&self) -> usize {
        1 << self.env_vars.len()
    }

    pub fn sys_count(&self) -> usize {
        1 << self.sys_vars.len()
    }

    pub fn node_count(&self) -> usize {
        self.sys_count() * self.goals
    }

    pub fn node(&self, sys: u32, goal: usize) -> u32 {
        (goal * self.sys_count()) as u32 + sys
    }

    pub fn node_sys(&self, node: u32) -> u32 {
        node % self.sys_count() as u32
    }

    pub fn node_goal(&self, node: u32) -> usize {
        node as usize / self.sys_count()
    }

    pub fn transition(&self, node: u32, e: u32) -> Option<u32> {
        self.next[node as usize * self.env_count() + e as usize]
    }

    /// Overwrites one transition; used to build mutants in tests.
    pub fn set_transition(&mut self, node: u32, e: u32, to: Option<u32>) {
        let k = node as usize * self.env_count() + e as usize;
        self.next[k] = to;
    }

    pub fn start(&self, e: u32) -> Option<ExecState> {
        self.initial[e as usize].map(|node| ExecState { node, prev: None })
    }

    /// Starts at an arbitrary system valuation (goal 0) without history.
    pub fn start_at(&self, sys: u32) -> ExecState {
        ExecState { node: self.node(sys, 0), prev: None }
    }

    fn packed(&self, e: u32, y: u32) -> u32 {
        e | (y << self.env_vars.len())
    }

    pub fn assumption_ok(&self, st: &ExecState, e: u32) -> bool {
        match st.prev {
            None => self.env_init[e as usize],
            Some(s) => self.env_ok[s as usize * self.env_count() + e as usize],
        }
    }

    /// One Mealy step on environment input `e`.
    pub fn step(&self, st: &ExecState, e: u32) -> Result<(ExecState, u32), SafetyError> {
        if e as usize >= self.env_count() {
            return Err(SafetyError::Spec(format!("env valuation {e} out of range")));
        }
        if !self.assumption_ok(st, e) {
            return Err(SafetyError::AssumptionViolation { env: e });
        }
        let to = self.transition(st.node, e).ok_or(SafetyError::OutsideWinning { node: st.node, env: e })?;
        let s = self.packed(e, self.node_sys(st.node));
        Ok((ExecState { node: to, prev: Some(s) }, self.node_sys(to)))
    }

    fn valuation(names: &[String], bits: u32) -> BTreeMap<String, bool> {
        names.iter().enumerate().map(|(i, n)| (n.clone(), (bits >> i) & 1 == 1)).collect()
    }

    fn bits(names: &[String], val: &BTreeMap<String, bool>) -> Result<u32, SafetyError> {
        if val.len() != names.len() {
            return Err(SafetyError::SpecFile(format!("valuation {val:?} does not match variables {names:?}")));
        }
        names.iter().enumerate().try_fold(0u32, |acc, (i, n)| match val.get(n) {
            Some(true) => Ok(acc | 1 << i),
            Some(false) => Ok(acc),
            None => Err(SafetyError::SpecFile(format!("valuation lacks variable {n}"))),
        })
    }

    /// Transition table for audit, listing only defined transitions.
    pub fn to_json(&self) -> String {
        let n_e = self.env_count() as u32;
        let mut used = std::collections::BTreeSet::new();
        let mut transitions = Vec::new();
        for node in 0..self.node_count() as u32 {
            for e in 0..n_e {
                if let Some(to) = self.transition(node, e) {
                    used.insert(node);
                    used.insert(to);
                    transitions.push(ExportEdge { from: node, env: Self::valuation(&self.env_vars, e), to });
                }
            }
        }
        let initial = (0..n_e)
            .filter_map(|e| {
                self.initial[e as usize].map(|to| ExportEdge { from: to, env: Self::valuation(&self.env_vars, e), to })
            })
            .collect();
        let nodes = used
            .into_iter()
            .map(|id| ExportNode {
                id,
                goal: self.node_goal(id),
                sys: Self::valuation(&self.sys_vars, self.node_sys(id)),
            })
            .collect();
        let export = Export {
            env_vars: self.env_vars.clone(),
            sys_vars: self.sys_vars.clone(),
            goals: self.goals,
            initial,
            nodes,
            transitions,
        };
        crate::jsonfmt::to_string_pretty(&export).expect("strategy serializes")
    }

    /// Reads a table written by [`Strategy::to_json`]. The environment
    /// assumptions are not part of the file and come from `spec`.
    pub fn from_json(text: &str, spec: &Gr1Spec) -> Result<Self, SafetyError> {
        let ex: Export = serde_json::from_str(text).map_err(|e| SafetyError::SpecFile(e.to_string()))?;
        if ex.env_vars != spec.env_vars || ex.sys_vars != spec.sys_vars {
            return Err(SafetyError::SpecFile("strategy and spec declare different variables".into()));
        }
        let g = Game::new(spec)?;
        let n_e = g.env_count();
        if ex.goals == 0 {
            return Err(SafetyError::SpecFile("strategy has no goals".into()));
        }
        let node_count = (g.sys_count() * ex.goals) as u32;
        let check = |n: u32| {
            if n < node_count {
                Ok(n)
            } else {
                Err(SafetyError::SpecFile(format!("node {n} out of range")))
            }
        };
        let mut initial = vec![None; n_e];
        for edge in &ex.initial {
            initial[Self::bits(&ex.env_vars, &edge.env)? as usize] = Some(check(edge.to)?);
        }
        let mut next = vec![None; node_count as usize * n_e];
        for edge in &ex.transitions {
            let e = Self::bits(&ex.env_vars, &edge.env)? as usize;
            next[check(edge.from)? as usize * n_e + e] = Some(check(edge.to)?);
        }
        let env_init = (0..n_e as u32).map(|e| g.env_init_ok(e)).collect();
        let env_ok = (0..g.state_count() as u32)
            .flat_map(|s| (0..n_e as u32).map(move |e| (s, e)))
            .map(|(s, e)| g.env_trans_ok(s, e))
            .collect();
        Ok(Strategy { env_vars: ex.env_vars, sys_vars: ex.sys_vars, goals: ex.goals, initial, next, env_init, env_ok })
    }
}

#[derive(Serialize, Deserialize)]
struct ExportNode {
    id: u32,
    goal: usize,
    sys: BTreeMap<String, bool>,
}

#[derive(Serialize, Deserialize)]
struct ExportEdge {
    from: u32,
    env: BTreeMap<String, bool>,
    to: u32,
}

#[derive(Serialize, Deserialize)]
struct Export {
    env_vars: Vec<String>,
    sys_vars: Vec<String>,
    goals: usize,
    initial: Vec<ExportEdge>,
    nodes: Vec<ExportNode>,
    transitions: Vec<ExportEdge>,
}

/// Solves the game and extracts a deterministic strategy. Ties between
/// system moves go to the lowest valuation.
pub fn solve_gr1(spec: &Gr1Spec) -> Result<Synthesis, SafetyError> {
    let g = Game::new(spec)?;
    let mv = Moves::build(&g)?;
    let z = winning_region(&g, &mv);
    let n_e = g.env_count() as u32;
    let n_y = g.sys_count() as u32;

    let mut initial = Vec::with_capacity(n_e as usize);
    for e in 0..n_e {
        if !g.env_init_ok(e) {
            initial.push(None);
            continue;
        }
        let y = (0..n_y).find(|&y| {
            let s = g.state(e, y);
            g.sys_init_ok(s) && z[s as usize]
        });
        match y {
            // goal 0 nodes share the valuation's index
            Some(y) => initial.push(Some(y)),
            None => {
                let names = Strategy::valuation(&spec.env_vars, e);
                return Ok(Synthesis::Unrealizable(format!(
                    "no winning initial system valuation for environment {names:?}"
                )));
            }
        }
    }

    let goals = g.sys_justice.len();
    let layers: Vec<GoalLayers> = (0..goals).map(|j| goal_layers(&g, &mv, &z, j)).collect();
    let mut next = vec![None; goals * n_y as usize * n_e as usize];
    for (j, lay) in layers.iter().enumerate() {
        let rank = |s: usize| lay.y.iter().position(|set| set[s]);
        for y in 0..n_y {
            for e in 0..n_e {
                let s = g.state(e, y);
                if !z[s as usize] {
                    continue;
                }
                let r = rank(s as usize).expect("winning state has a rank");
                let (y2, j2) = if Game::holds(&g.sys_justice[j], s) {
                    (mv.pick(s, &z), (j + 1) % goals)
                } else if let Some(y2) = mv.pick(s, &lay.y[r - 1]) {
                    (Some(y2), j)
                } else {
                    let pick = g.env_justice.iter().enumerate().find_map(|(i, ej)| {
                        let x = &lay.x[r][i];
                        if x[s as usize] && !Game::holds(ej, s) {
                            mv.pick(s, x)
                        } else {
                            None
                        }
                    });
                    (pick, j)
                };
                let y2 = y2.expect("winning state has a strategy move");
                let node = j as u32 * n_y + y;
                next[(node * n_e + e) as usize] = Some(j2 as u32 * n_y + y2);
            }
        }
    }

    let env_init = (0..n_e).map(|e| g.env_init_ok(e)).collect();
    let env_ok = (0..g.state_count() as u32)
        .flat_map(|s| (0..n_e).map(move |e| (s, e)))
        .map(|(s, e)| g.env_trans_ok(s, e))
        .collect();
    Ok(Synthesis::Realizable(Strategy {
        env_vars: spec.env_vars.clone(),
        sys_vars: spec.sys_vars.clone(),
        goals,
        initial,
        next,
        env_init,
        env_ok,
    }))
}
