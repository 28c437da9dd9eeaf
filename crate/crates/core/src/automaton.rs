//! Deterministic Rabin automata: text-format parsing, validation,
//! accepting-lasso search, and single-step execution for monitoring.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

use crate::formula::{parse_formula, FormulaError, LitFormula, PropositionDef};

#[derive(Debug, Clone)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub guard: LitFormula,
}

/// One Rabin pair `(B, Γ)`: a run accepts iff it visits `B` finitely often
/// and `Γ` infinitely often.
#[derive(Debug, Clone)]
pub struct RabinPair {
    pub fin: BTreeSet<usize>,
    pub inf: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct Dra {
    pub states: Vec<String>,
    pub initial: usize,
    pub transitions: Vec<Transition>,
    pub rabin_pairs: Vec<RabinPair>,
}

#[derive(Debug, Clone, Error)]
pub enum AutomatonError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown state '{0}'")]
    UnknownState(String),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("validation failed:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("no accepting run exists")]
    NoAcceptingRun,
    #[error("determinism violated at runtime: state '{state}' has {count} enabled transitions for labels {labels:?}")]
    NondeterministicStep { state: String, count: usize, labels: Vec<String> },
}

/// A specific validation defect, reported with enough detail to fix the input.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    MissingInitial(String),
    UnknownEndpoint { line: usize, name: String },
    NoRabinPairs,
    Nondeterministic { state: String, guard_a: String, guard_b: String, witness: Vec<String> },
    TooManyPropositions { state: String, count: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingInitial(s) => write!(f, "initial state '{s}' not declared"),
            Violation::UnknownEndpoint { line, name } => {
                write!(f, "line {line}: transition endpoint '{name}' not declared")
            }
            Violation::NoRabinPairs => write!(f, "at least one Rabin pair is required"),
            Violation::Nondeterministic { state, guard_a, guard_b, witness } => write!(
                f,
                "state '{state}': guards \"{guard_a}\" and \"{guard_b}\" jointly satisfiable (e.g. true propositions {{{}}})",
                witness.join(", ")
            ),
            Violation::TooManyPropositions { state, count } => write!(
                f,
                "state '{state}': {count} distinct propositions in outgoing guards exceeds the 20-proposition enumeration cap"
            ),
        }
    }
}

/// Accepting run in lasso form: a finite prefix followed by a cycled suffix.
/// `transition_guards` has one entry per hop — prefix hops, the bridge into
/// the suffix, the suffix hops, and the hop closing the cycle.
#[derive(Debug, Clone)]
pub struct AcceptingRun {
    pub prefix: Vec<usize>,
    pub suffix: Vec<usize>,
    pub transition_guards: Vec<LitFormula>,
    pub pair_index: usize,
}

impl AcceptingRun {
    /// prefix followed by suffix, as state indices.
    pub fn states(&self) -> Vec<usize> {
        self.prefix.iter().chain(self.suffix.iter()).copied().collect()
    }

    pub fn format(&self, dra: &Dra) -> String {
        let pre: Vec<&str> = self.prefix.iter().map(|q| dra.states[*q].as_str()).collect();
        let suf: Vec<&str> = self.suffix.iter().map(|q| dra.states[*q].as_str()).collect();
        if pre.is_empty() {
            format!("({})^w", suf.join(" "))
        } else {
            format!("{} ({})^w", pre.join(" "), suf.join(" "))
        }
    }
}

/// Outcome of one monitoring step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Moved(usize),
    NoMove,
}

impl Dra {
    pub fn state_index(&self, name: &str) -> Result<usize, AutomatonError> {
        self.states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| AutomatonError::UnknownState(name.to_string()))
    }

    /// States reachable from `q` by a single non-self transition.
    pub fn neighbors(&self, q: usize) -> BTreeSet<usize> {
        self.transitions
            .iter()
            .filter(|tr| tr.from == q && tr.to != q)
            .map(|tr| tr.to)
            .collect()
    }

    /// Disjunction of all self-loop guards at `q`; `false` when there is none.
    pub fn self_loop_guard(&self, q: usize) -> LitFormula {
        let mut guards = self
            .transitions
            .iter()
            .filter(|tr| tr.from == q && tr.to == q)
            .map(|tr| tr.guard.clone());
        match guards.next() {
            None => LitFormula::False,
            Some(first) => guards.fold(first, LitFormula::or),
        }
    }

    /// Disjunction of all guards on edges `from -> to`; `false` if no edge.
    pub fn hop_guard(&self, from: usize, to: usize) -> LitFormula {
        let mut guards = self
            .transitions
            .iter()
            .filter(|tr| tr.from == from && tr.to == to)
            .map(|tr| tr.guard.clone());
        match guards.next() {
            None => LitFormula::False,
            Some(first) => guards.fold(first, LitFormula::or),
        }
    }

    /// Execute one step under a label set. Exactly one enabled transition is
    /// expected on a validated automaton; none yields `NoMove`.
    pub fn step(&self, q: usize, labels: &BTreeSet<String>) -> Result<StepOutcome, AutomatonError> {
        let enabled: Vec<&Transition> = self
            .transitions
            .iter()
            .filter(|tr| tr.from == q && tr.guard.eval_labels(labels))
            .collect();
        match enabled.len() {
            0 => Ok(StepOutcome::NoMove),
            1 => Ok(StepOutcome::Moved(enabled[0].to)),
            n => Err(AutomatonError::NondeterministicStep {
                state: self.states[q].clone(),
                count: n,
                labels: labels.iter().cloned().collect(),
            }),
        }
    }

    /// Determinism and structural checks. Determinism is decided exactly by
    /// truth-table enumeration over the propositions mentioned by each
    /// state's outgoing guards, capped at 20 distinct propositions.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        if self.rabin_pairs.is_empty() {
            violations.push(Violation::NoRabinPairs);
        }
        for q in 0..self.states.len() {
            let outgoing: Vec<&Transition> =
                self.transitions.iter().filter(|tr| tr.from == q).collect();
            if outgoing.len() < 2 {
                continue;
            }
            let mut props: BTreeSet<String> = BTreeSet::new();
            for tr in &outgoing {
                props.extend(tr.guard.propositions());
            }
            if props.len() > 20 {
                violations.push(Violation::TooManyPropositions {
                    state: self.states[q].clone(),
                    count: props.len(),
                });
                continue;
            }
            let props: Vec<String> = props.into_iter().collect();
            for i in 0..outgoing.len() {
                for j in i + 1..outgoing.len() {
                    if let Some(witness) =
                        jointly_satisfiable(&outgoing[i].guard, &outgoing[j].guard, &props)
                    {
                        violations.push(Violation::Nondeterministic {
                            state: self.states[q].clone(),
                            guard_a: outgoing[i].guard.to_string(),
                            guard_b: outgoing[j].guard.to_string(),
                            witness,
                        });
                    }
                }
            }
        }
        violations
    }

    /// Search accepting lassos: for every Rabin pair and every reachable
    /// `Γ\B` state on a `B`-avoiding cycle, combine each simple path from the
    /// initial state with the shortest such cycle. Runs are ordered by total
    /// length, then lexicographically by state names; at most `limit` are
    /// returned.
    pub fn find_accepting_runs(&self, limit: usize) -> Result<Vec<AcceptingRun>, AutomatonError> {
        let mut runs: Vec<AcceptingRun> = Vec::new();
        for (pair_index, pair) in self.rabin_pairs.iter().enumerate() {
            for &gamma in &pair.inf {
                if pair.fin.contains(&gamma) {
                    continue;
                }
                let cycle = match self.shortest_cycle_avoiding(gamma, &pair.fin) {
                    Some(c) => c,
                    None => continue,
                };
                for path in self.simple_paths_to(gamma) {
                    // path ends at gamma; the suffix starts there.
                    let prefix = path[..path.len() - 1].to_vec();
                    let run = self.assemble_run(prefix, cycle.clone(), pair_index);
                    runs.push(run);
                }
            }
        }
        if runs.is_empty() {
            return Err(AutomatonError::NoAcceptingRun);
        }
        runs.sort_by(|a, b| {
            let la = a.prefix.len() + a.suffix.len();
            let lb = b.prefix.len() + b.suffix.len();
            la.cmp(&lb).then_with(|| {
                let na: Vec<&String> = a.states().iter().map(|q| &self.states[*q]).collect();
                let nb: Vec<&String> = b.states().iter().map(|q| &self.states[*q]).collect();
                na.cmp(&nb).then(a.pair_index.cmp(&b.pair_index))
            })
        });
        runs.dedup_by(|a, b| {
            a.prefix == b.prefix && a.suffix == b.suffix && a.pair_index == b.pair_index
        });
        runs.truncate(limit);
        Ok(runs)
    }

    fn assemble_run(&self, prefix: Vec<usize>, suffix: Vec<usize>, pair_index: usize) -> AcceptingRun {
        let mut guards = Vec::new();
        let states: Vec<usize> = prefix.iter().chain(suffix.iter()).copied().collect();
        for w in states.windows(2) {
            guards.push(self.hop_guard(w[0], w[1]));
        }
        // hop closing the suffix cycle
        guards.push(self.hop_guard(*suffix.last().unwrap(), suffix[0]));
        AcceptingRun { prefix, suffix, transition_guards: guards, pair_index }
    }

    /// Shortest cycle through `start` staying outside `avoid`; the returned
    /// vector begins at `start` and omits the closing hop. BFS with sorted
    /// neighbor expansion keeps the result deterministic.
    fn shortest_cycle_avoiding(&self, start: usize, avoid: &BTreeSet<usize>) -> Option<Vec<usize>> {
        if avoid.contains(&start) {
            return None;
        }
        if self.transitions.iter().any(|tr| tr.from == start && tr.to == start) {
            return Some(vec![start]);
        }
        let mut pred: Vec<Option<usize>> = vec![None; self.states.len()];
        let mut seen = vec![false; self.states.len()];
        let mut queue = VecDeque::new();
        for next in self.successors_sorted(start) {
            if next == start {
                return Some(vec![start]);
            }
            if !avoid.contains(&next) && !seen[next] {
                seen[next] = true;
                pred[next] = Some(start);
                queue.push_back(next);
            }
        }
        while let Some(q) = queue.pop_front() {
            for next in self.successors_sorted(q) {
                if next == start {
                    let mut rev = vec![q];
                    let mut cur = q;
                    while let Some(p) = pred[cur] {
                        if p == start {
                            break;
                        }
                        rev.push(p);
                        cur = p;
                    }
                    rev.push(start);
                    rev.reverse();
                    return Some(rev);
                }
                if !avoid.contains(&next) && !seen[next] {
                    seen[next] = true;
                    pred[next] = Some(q);
                    queue.push_back(next);
                }
            }
        }
        None
    }

    fn successors_sorted(&self, q: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .transitions
            .iter()
            .filter(|tr| tr.from == q)
            .map(|tr| tr.to)
            .collect();
        out.sort_by(|a, b| self.states[*a].cmp(&self.states[*b]));
        out.dedup();
        out
    }

    /// All simple paths from the initial state to `target`, shortest first.
    fn simple_paths_to(&self, target: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut queue: VecDeque<Vec<usize>> = VecDeque::new();
        queue.push_back(vec![self.initial]);
        while let Some(path) = queue.pop_front() {
            let last = *path.last().unwrap();
            if last == target {
                out.push(path);
                continue;
            }
            for next in self.successors_sorted(last) {
                if !path.contains(&next) {
                    let mut p = path.clone();
                    p.push(next);
                    queue.push_back(p);
                }
            }
        }
        out
    }
}

/// Exact joint-satisfiability check over an explicit truth table.
fn jointly_satisfiable(a: &LitFormula, b: &LitFormula, props: &[String]) -> Option<Vec<String>> {
    let n = props.len();
    for bits in 0u64..(1u64 << n) {
        let labels: BTreeSet<String> = props
            .iter()
            .enumerate()
            .filter(|(i, _)| bits >> i & 1 == 1)
            .map(|(_, p)| p.clone())
            .collect();
        if a.eval_labels(&labels) && b.eval_labels(&labels) {
            return Some(labels.into_iter().collect());
        }
    }
    None
}

/// Parse the line-oriented DRA text format and validate the result.
///
/// ```text
/// states: q0 q1 q2 q3
/// initial: q0
/// trans: q0 q0 "!A & !B & !O & C"
/// rabin: {} {q3}
/// ```
pub fn parse_dra(text: &str, props: &[PropositionDef]) -> Result<Dra, AutomatonError> {
    let mut states: Vec<String> = Vec::new();
    let mut initial: Option<String> = None;
    let mut raw_transitions: Vec<(usize, String, String, String)> = Vec::new();
    let mut rabin_raw: Vec<(usize, Vec<String>, Vec<String>)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let lineno = lineno + 1;
        let (key, rest) = line.split_once(':').ok_or_else(|| AutomatonError::Parse {
            line: lineno,
            msg: "expected 'key: ...'".into(),
        })?;
        let rest = rest.trim();
        match key.trim() {
            "states" => {
                for name in rest.split_whitespace() {
                    if !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                        return Err(AutomatonError::Parse {
                            line: lineno,
                            msg: format!("bad state name '{name}'"),
                        });
                    }
                    states.push(name.to_string());
                }
            }
            "initial" => initial = Some(rest.to_string()),
            "trans" => {
                let mut parts = rest.splitn(3, char::is_whitespace);
                let from = parts.next().unwrap_or("").to_string();
                let to = parts.next().unwrap_or("").to_string();
                let guard = parts.next().unwrap_or("").trim();
                let guard = guard
                    .strip_prefix('"')
                    .and_then(|g| g.strip_suffix('"'))
                    .ok_or_else(|| AutomatonError::Parse {
                        line: lineno,
                        msg: "transition guard must be double-quoted".into(),
                    })?;
                if from.is_empty() || to.is_empty() {
                    return Err(AutomatonError::Parse {
                        line: lineno,
                        msg: "expected 'trans: FROM TO \"guard\"'".into(),
                    });
                }
                raw_transitions.push((lineno, from, to, guard.to_string()));
            }
            "rabin" => {
                let sets = parse_two_brace_sets(rest).ok_or_else(|| AutomatonError::Parse {
                    line: lineno,
                    msg: "expected 'rabin: {..} {..}'".into(),
                })?;
                rabin_raw.push((lineno, sets.0, sets.1));
            }
            other => {
                return Err(AutomatonError::Parse {
                    line: lineno,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }

    let initial_name = initial.ok_or_else(|| AutomatonError::Parse {
        line: 0,
        msg: "missing 'initial:' line".into(),
    })?;
    let find = |name: &str| states.iter().position(|s| s == name);
    let initial = find(&initial_name)
        .ok_or_else(|| AutomatonError::Invalid(vec![Violation::MissingInitial(initial_name.clone())]))?;

    let mut structural = Vec::new();
    let mut transitions = Vec::new();
    for (lineno, from, to, guard) in raw_transitions {
        let guard = parse_formula(&guard)?;
        guard.check_props(props)?;
        match (find(&from), find(&to)) {
            (Some(f), Some(t)) => transitions.push(Transition { from: f, to: t, guard }),
            (None, _) => structural.push(Violation::UnknownEndpoint { line: lineno, name: from }),
            (_, None) => structural.push(Violation::UnknownEndpoint { line: lineno, name: to }),
        }
    }
    let mut rabin_pairs = Vec::new();
    for (lineno, fin, inf) in rabin_raw {
        let resolve = |names: Vec<String>| -> Result<BTreeSet<usize>, AutomatonError> {
            names
                .into_iter()
                .map(|n| {
                    find(&n).ok_or_else(|| AutomatonError::Parse {
                        line: lineno,
                        msg: format!("unknown state '{n}' in rabin pair"),
                    })
                })
                .collect()
        };
        rabin_pairs.push(RabinPair { fin: resolve(fin)?, inf: resolve(inf)? });
    }

    let dra = Dra { states, initial, transitions, rabin_pairs };
    let mut violations = structural;
    violations.extend(dra.validate());
    if violations.is_empty() {
        Ok(dra)
    } else {
        Err(AutomatonError::Invalid(violations))
    }
}

fn parse_two_brace_sets(s: &str) -> Option<(Vec<String>, Vec<String>)> {
    let s = s.trim();
    let (first, rest) = brace_set(s)?;
    let (second, tail) = brace_set(rest.trim_start())?;
    if !tail.trim().is_empty() {
        return None;
    }
    Some((first, second))
}

fn brace_set(s: &str) -> Option<(Vec<String>, &str)> {
    let s = s.strip_prefix('{')?;
    let end = s.find('}')?;
    let names = s[..end]
        .split_whitespace()
        .map(|w| w.trim_matches(',').to_string())
        .filter(|w| !w.is_empty())
        .collect();
    Some((names, &s[end + 1..]))
}

#[cfg(test)]
pub(crate) const TWO_ROBOT_DRA: &str = r#"
# DRA for (eventually A) and (eventually B) and always (!O and C)
states: q0 q1 q2 q3
initial: q0
trans: q0 q0 "!A & !B & !O & C"
trans: q0 q1 "B & !A & !O & C"
trans: q0 q2 "A & !B & !O & C"
trans: q0 q3 "A & B & !O & C"
trans: q1 q1 "!A & !O & C"
trans: q1 q3 "A & !O & C"
trans: q2 q2 "!B & !O & C"
trans: q2 q3 "B & !O & C"
trans: q3 q3 "!O & C"
rabin: {} {q3}
"#;
