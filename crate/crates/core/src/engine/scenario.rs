use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::lts::TER;

/// Scripted answers for one phase of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    /// Pick answers, consumed in order.
    pub choices: Vec<String>,
    /// Condition valuations per if/while activity, consumed in order.
    pub branches: BTreeMap<String, Vec<bool>>,
    /// Branch priority per flow; unlisted branches follow in index order.
    pub interleave: BTreeMap<String, Vec<u32>>,
    /// Labels whose next delivery is replaced by `TER`.
    pub inject_ter_at: Vec<String>,
    /// Partner outcome tags per operation, consumed in order.
    pub outcomes: BTreeMap<String, Vec<String>>,
}

impl Script {
    pub fn is_empty(&self) -> bool {
        *self == Script::default()
    }
}

/// A reproducible run description. Directives after a `recovery` line take
/// over once a recovery plan has been executed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub script: Script,
    pub recovery: Script,
}

impl Scenario {
    pub fn interactive(name: &str) -> Self {
        Scenario {
            name: name.to_string(),
            ..Default::default()
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, EngineError> {
    let mut sc = Scenario::default();
    let mut in_recovery = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| EngineError::Scenario { line, message };
        let words: Vec<&str> = content.split_whitespace().collect();
        let script = if in_recovery {
            &mut sc.recovery
        } else {
            &mut sc.script
        };
        match words.as_slice() {
            ["scenario", name] => sc.name = name.to_string(),
            ["recovery"] => in_recovery = true,
            ["choice", event] => script.choices.push(event.to_string()),
            ["branch", id, value] => {
                let v = match *value {
                    "true" => true,
                    "false" => false,
                    other => return Err(err(format!("expected true or false, found `{other}`"))),
                };
                script.branches.entry(id.to_string()).or_default().push(v);
            }
            ["interleave", flow, order] => {
                let branches = order
                    .split(',')
                    .map(|b| b.trim().parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(format!("bad branch list `{order}`")))?;
                script.interleave.insert(flow.to_string(), branches);
            }
            ["inject", event, "at", label] => {
                if *event != TER {
                    return Err(err(format!("only {TER} can be injected")));
                }
                script.inject_ter_at.push(label.to_string());
            }
            ["outcome", op, tag] => script
                .outcomes
                .entry(op.to_string())
                .or_default()
                .push(tag.to_string()),
            _ => return Err(err(format!("unrecognized directive `{content}`"))),
        }
    }
    Ok(sc)
}
