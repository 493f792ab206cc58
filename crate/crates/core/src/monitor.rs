//! Property patterns compiled into deterministic, colored monitor automata.
//!
//! A monitor accepts the *bad* finite traces of its property. Every compiled
//! automaton is total: events it does not mention self-loop. Liveness
//! monitors read [`TER`] as the end of the run, which exposes unfulfilled
//! obligations. Red (accepting) states are absorbing.
//!
//! State numbering follows a fixed layout: scope states first (the initial
//! state is 1), then the pattern states, then the red state where the pattern
//! has one separate from the others.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::lts::TER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyKind {
    Safety,
    Liveness,
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PropertyKind::Safety => "safety",
            PropertyKind::Liveness => "liveness",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    Absence(String),
    Existence(String),
    Response {
        trigger: BTreeSet<String>,
        response: BTreeSet<String>,
    },
    Precedence {
        first: BTreeSet<String>,
        later: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AfterMode {
    /// Every event of the set, in any order.
    AllInAnyOrder,
    /// Any one event of the set.
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Global,
    After {
        events: BTreeSet<String>,
        mode: AfterMode,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertySpec {
    pub name: String,
    pub kind: PropertyKind,
    pub pattern: Pattern,
    pub scope: Scope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Yellow,
    Green,
    Neutral,
}

/// Monitor state; displayed one-based to match the usual drawings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MonitorState(pub u32);

impl MonitorState {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// The state with the given one-based number.
    pub fn numbered(n: u32) -> Self {
        MonitorState(n - 1)
    }

    pub fn number(self) -> u32 {
        self.0 + 1
    }
}

impl fmt::Display for MonitorState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Monitor {
    pub name: String,
    pub kind: PropertyKind,
    pub num_states: u32,
    pub alphabet: BTreeSet<String>,
    #[serde(with = "delta_as_list")]
    pub delta: BTreeMap<(MonitorState, String), MonitorState>,
    pub initial: MonitorState,
    pub accepting: BTreeSet<MonitorState>,
    pub colors: Vec<Color>,
}

/// JSON object keys must be strings, so transitions travel as a list of
/// `(from, event, to)` triples.
mod delta_as_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::MonitorState;

    type Delta = BTreeMap<(MonitorState, String), MonitorState>;

    pub fn serialize<S: Serializer>(delta: &Delta, s: S) -> Result<S::Ok, S::Error> {
        let triples: Vec<(MonitorState, &str, MonitorState)> = delta
            .iter()
            .map(|((q, e), r)| (*q, e.as_str(), *r))
            .collect();
        triples.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Delta, D::Error> {
        let triples = Vec::<(MonitorState, String, MonitorState)>::deserialize(d)?;
        Ok(triples.into_iter().map(|(q, e, r)| ((q, e), r)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("unsupported pattern for property `{name}`: {reason}")]
    UnsupportedPattern { name: String, reason: String },
    #[error("property file line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Monitor {
    pub fn states(&self) -> impl Iterator<Item = MonitorState> {
        (0..self.num_states).map(MonitorState)
    }

    pub fn step(&self, q: MonitorState, event: &str) -> MonitorState {
        self.delta
            .get(&(q, event.to_string()))
            .copied()
            .unwrap_or(q)
    }

    pub fn run<'a>(
        &self,
        from: MonitorState,
        events: impl IntoIterator<Item = &'a str>,
    ) -> MonitorState {
        events.into_iter().fold(from, |q, e| self.step(q, e))
    }

    pub fn color_of(&self, q: MonitorState) -> Color {
        self.colors[q.index()]
    }

    pub fn is_red(&self, q: MonitorState) -> bool {
        self.accepting.contains(&q)
    }

    pub fn is_green(&self, q: MonitorState) -> bool {
        self.color_of(q) == Color::Green
    }

    /// Events that move the monitor between states somewhere.
    pub fn relevant_events(&self) -> BTreeSet<&str> {
        self.delta
            .iter()
            .filter(|((q, _), d)| q != *d)
            .map(|((_, e), _)| e.as_str())
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        writeln!(out, "digraph {} {{", self.name).unwrap();
        writeln!(out, "  rankdir=LR;").unwrap();
        for q in self.states() {
            let fill = match self.color_of(q) {
                Color::Red => "red",
                Color::Yellow => "yellow",
                Color::Green => "green",
                Color::Neutral => "white",
            };
            let shape = if self.is_red(q) {
                "doublecircle"
            } else {
                "circle"
            };
            writeln!(
                out,
                "  q{} [label=\"{}\", shape={shape}, style=filled, fillcolor={fill}];",
                q.number(),
                q.number()
            )
            .unwrap();
        }
        writeln!(out, "  init [shape=point];").unwrap();
        writeln!(out, "  init -> q{};", self.initial.number()).unwrap();
        let mut edges: BTreeMap<(MonitorState, MonitorState), Vec<&str>> = BTreeMap::new();
        for ((q, e), d) in &self.delta {
            if q != d {
                edges.entry((*q, *d)).or_default().push(e);
            }
        }
        for ((q, d), labels) in edges {
            writeln!(
                out,
                "  q{} -> q{} [label=\"{}\"];",
                q.number(),
                d.number(),
                labels.join(",")
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }
}

/// Assign colors: red = accepting; yellow = non-red with a one-step move
/// into red; green = neither, but entered in one step from a yellow state.
pub fn color(mut m: Monitor) -> Monitor {
    let n = m.num_states as usize;
    let mut events: BTreeSet<String> = m.alphabet.clone();
    events.insert(TER.to_string());
    let mut colors = vec![Color::Neutral; n];
    for q in m.states() {
        if m.accepting.contains(&q) {
            colors[q.index()] = Color::Red;
        }
    }
    for q in m.states() {
        if colors[q.index()] == Color::Red {
            continue;
        }
        if events.iter().any(|e| m.accepting.contains(&m.step(q, e))) {
            colors[q.index()] = Color::Yellow;
        }
    }
    let yellow: Vec<MonitorState> = m
        .states()
        .filter(|q| colors[q.index()] == Color::Yellow)
        .collect();
    for y in yellow {
        for e in &events {
            let d = m.step(y, e);
            if colors[d.index()] == Color::Neutral {
                colors[d.index()] = Color::Green;
            }
        }
    }
    m.colors = colors;
    m
}

struct Template {
    n: u32,
    delta: BTreeMap<(MonitorState, String), MonitorState>,
    accepting: BTreeSet<MonitorState>,
}

impl Template {
    fn add(&mut self, from: u32, events: &BTreeSet<String>, to: u32) {
        for e in events {
            self.delta
                .entry((MonitorState(from), e.clone()))
                .or_insert(MonitorState(to));
        }
    }
}

fn set(e: &str) -> BTreeSet<String> {
    [e.to_string()].into()
}

/// Compile a property into a colored monitor.
pub fn compile(spec: &PropertySpec) -> Result<Monitor, MonitorError> {
    let unsupported = |reason: &str| MonitorError::UnsupportedPattern {
        name: spec.name.clone(),
        reason: reason.to_string(),
    };
    let expected_kind = match spec.pattern {
        Pattern::Absence(_) | Pattern::Precedence { .. } => PropertyKind::Safety,
        Pattern::Existence(_) | Pattern::Response { .. } => PropertyKind::Liveness,
    };
    if spec.kind != expected_kind {
        return Err(unsupported(&format!(
            "pattern is a {expected_kind} pattern but the property is declared {}",
            spec.kind
        )));
    }
    let mentions_ter = |s: &BTreeSet<String>| s.contains(TER);
    match &spec.pattern {
        Pattern::Absence(e) | Pattern::Existence(e) if e == TER => {
            return Err(unsupported("TER cannot be a pattern event"))
        }
        Pattern::Response { trigger, response } if trigger.is_empty() || response.is_empty() => {
            return Err(unsupported(
                "response needs nonempty trigger and response sets",
            ))
        }
        Pattern::Precedence { first, later } if first.is_empty() || later.is_empty() => {
            return Err(unsupported("precedence needs nonempty event sets"))
        }
        Pattern::Response { trigger, response }
            if mentions_ter(trigger) || mentions_ter(response) =>
        {
            return Err(unsupported("TER cannot be a pattern event"))
        }
        _ => {}
    }

    let mut t = Template {
        n: 0,
        delta: BTreeMap::new(),
        accepting: BTreeSet::new(),
    };

    // scope prefix; `armed` is where the pattern automaton starts
    let armed = match &spec.scope {
        Scope::Global => {
            t.n = 1;
            0
        }
        Scope::After { events, .. } if events.is_empty() => {
            return Err(unsupported("after-scope needs a nonempty event set"))
        }
        Scope::After { events, .. } if events.contains(TER) => {
            return Err(unsupported("TER cannot open a scope"))
        }
        Scope::After {
            events,
            mode: AfterMode::Any,
        } => {
            t.n = 2;
            t.add(0, events, 1);
            1
        }
        Scope::After {
            events,
            mode: AfterMode::AllInAnyOrder,
        } => {
            let list: Vec<&String> = events.iter().collect();
            if list.len() > 8 {
                return Err(unsupported("after-all scope supports at most 8 events"));
            }
            // one state per subset of seen events, ordered by popcount then value
            let full = (1u32 << list.len()) - 1;
            let mut subsets: Vec<u32> = (0..=full).collect();
            subsets.sort_by_key(|s| (s.count_ones(), *s));
            let number: BTreeMap<u32, u32> = subsets
                .iter()
                .enumerate()
                .map(|(i, s)| (*s, i as u32))
                .collect();
            for &s in &subsets {
                if s == full {
                    continue;
                }
                for (bit, e) in list.iter().enumerate() {
                    if s & (1 << bit) == 0 {
                        t.add(number[&s], &set(e), number[&(s | 1 << bit)]);
                    }
                }
            }
            t.n = subsets.len() as u32;
            number[&full]
        }
    };

    let ter = set(TER);
    match &spec.pattern {
        Pattern::Absence(e) => {
            let red = t.n;
            t.n += 1;
            t.add(armed, &set(e), red);
            t.accepting.insert(MonitorState(red));
        }
        Pattern::Existence(e) => {
            let done = t.n;
            let red = t.n + 1;
            t.n += 2;
            t.add(armed, &set(e), done);
            t.add(armed, &ter, red);
            t.accepting.insert(MonitorState(red));
        }
        Pattern::Response { trigger, response } => {
            let waiting = t.n;
            let red = t.n + 1;
            t.n += 2;
            let fresh: BTreeSet<String> = trigger.difference(response).cloned().collect();
            t.add(armed, &fresh, waiting);
            t.add(waiting, response, armed);
            t.add(waiting, &ter, red);
            t.accepting.insert(MonitorState(red));
        }
        Pattern::Precedence { first, later } => {
            let red = t.n;
            let good = t.n + 1;
            t.n += 2;
            t.add(armed, first, good);
            let violating: BTreeSet<String> = later.difference(first).cloned().collect();
            t.add(armed, &violating, red);
            t.accepting.insert(MonitorState(red));
        }
    }

    let mut alphabet: BTreeSet<String> = t.delta.keys().map(|(_, e)| e.clone()).collect();
    if spec.kind == PropertyKind::Liveness {
        alphabet.insert(TER.to_string());
    }
    // red states absorb every event
    for r in t.accepting.clone() {
        for e in &alphabet {
            t.delta.insert((r, e.clone()), r);
        }
    }
    Ok(color(Monitor {
        name: spec.name.clone(),
        kind: spec.kind,
        num_states: t.n,
        alphabet,
        delta: t.delta,
        initial: MonitorState(0),
        accepting: t.accepting,
        colors: Vec::new(),
    }))
}

fn parse_set(text: &str, line: usize) -> Result<BTreeSet<String>, MonitorError> {
    let inner = text
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| MonitorError::Parse {
            line,
            message: format!("expected `{{a,b,...}}`, found `{text}`"),
        })?;
    Ok(inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect())
}

/// Parse a property file: one `property NAME KIND PATTERN key=value... scope=...`
/// stanza per line; `#` starts a comment.
pub fn parse_properties(text: &str) -> Result<Vec<PropertySpec>, MonitorError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| MonitorError::Parse { line, message };
        let words: Vec<&str> = content.split_whitespace().collect();
        if words.len() < 4 || words[0] != "property" {
            return Err(err("expected `property NAME KIND PATTERN ...`".into()));
        }
        let name = words[1].to_string();
        let kind = match words[2] {
            "safety" => PropertyKind::Safety,
            "liveness" => PropertyKind::Liveness,
            other => return Err(err(format!("unknown property kind `{other}`"))),
        };
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for w in &words[4..] {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{w}`")))?;
            kv.insert(k, v);
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| err(format!("missing `{k}=`")))
        };
        let pattern = match words[3] {
            "absence" => Pattern::Absence(get("event")?.to_string()),
            "existence" => Pattern::Existence(get("event")?.to_string()),
            "response" => Pattern::Response {
                trigger: parse_set(get("trigger")?, line)?,
                response: parse_set(get("response")?, line)?,
            },
            "precedence" => Pattern::Precedence {
                first: parse_set(get("first")?, line)?,
                later: parse_set(get("later")?, line)?,
            },
            other => return Err(err(format!("unknown pattern `{other}`"))),
        };
        let scope_text = kv.get("scope").copied().unwrap_or("global");
        let scope = if scope_text == "global" {
            Scope::Global
        } else if let Some(rest) = scope_text.strip_prefix("after-all") {
            Scope::After {
                events: parse_set(rest, line)?,
                mode: AfterMode::AllInAnyOrder,
            }
        } else if let Some(rest) = scope_text.strip_prefix("after-any") {
            Scope::After {
                events: parse_set(rest, line)?,
                mode: AfterMode::Any,
            }
        } else {
            return Err(err(format!("unknown scope `{scope_text}`")));
        };
        out.push(PropertySpec {
            name,
            kind,
            pattern,
            scope,
        });
    }
    Ok(out)
}

/// Parse and compile every property in a file.
pub fn load_monitors(text: &str) -> Result<Vec<Monitor>, MonitorError> {
    parse_properties(text)?.iter().map(compile).collect()
}
