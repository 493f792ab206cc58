//! CNF instances and an incremental CDCL solver.

mod solver;

use std::fmt::Write;

use serde::{Deserialize, Serialize};

pub use solver::{Limits, Solver, SolverStats};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SatError {
    #[error("resource limit exceeded")]
    ResourceLimit,
    #[error("literal {0} is out of range")]
    LiteralOutOfRange(i32),
    #[error("DIMACS line {line}: {message}")]
    Dimacs { line: usize, message: String },
}

/// Clauses over variables 1..=num_vars, literals in DIMACS convention.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfInstance {
    pub num_vars: u32,
    pub clauses: Vec<Vec<i32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SatModel {
    /// Value of variable v at index v-1.
    pub assignment: Vec<bool>,
}

impl SatModel {
    pub fn value(&self, var: u32) -> bool {
        self.assignment[(var - 1) as usize]
    }

    pub fn lit_true(&self, lit: i32) -> bool {
        self.value(lit.unsigned_abs()) == (lit > 0)
    }

    pub fn satisfies(&self, clause: &[i32]) -> bool {
        clause.iter().any(|l| self.lit_true(*l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    Sat(SatModel),
    Unsat,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }

    pub fn model(self) -> Option<SatModel> {
        match self {
            SatResult::Sat(m) => Some(m),
            SatResult::Unsat => None,
        }
    }
}

impl CnfInstance {
    pub fn new(num_vars: u32) -> Self {
        CnfInstance {
            num_vars,
            clauses: Vec::new(),
        }
    }

    pub fn new_var(&mut self) -> u32 {
        self.num_vars += 1;
        self.num_vars
    }

    pub fn add_clause(&mut self, clause: Vec<i32>) -> &mut Self {
        self.clauses.push(clause);
        self
    }

    pub fn check_literals(&self) -> Result<(), SatError> {
        for c in &self.clauses {
            for &l in c {
                if l == 0 || l.unsigned_abs() > self.num_vars {
                    return Err(SatError::LiteralOutOfRange(l));
                }
            }
        }
        Ok(())
    }

    /// Whether every clause holds under `model`.
    pub fn evaluate(&self, model: &SatModel) -> bool {
        self.clauses.iter().all(|c| model.satisfies(c))
    }

    pub fn solver(&self) -> Result<Solver, SatError> {
        let mut s = Solver::new(self.num_vars);
        for c in &self.clauses {
            s.add_clause(c)?;
        }
        Ok(s)
    }

    pub fn to_dimacs(&self) -> String {
        let mut out = String::new();
        writeln!(out, "p cnf {} {}", self.num_vars, self.clauses.len()).unwrap();
        for c in &self.clauses {
            for l in c {
                write!(out, "{l} ").unwrap();
            }
            out.push_str("0\n");
        }
        out
    }

    pub fn from_dimacs(text: &str) -> Result<Self, SatError> {
        let mut inst: Option<CnfInstance> = None;
        let mut declared = 0usize;
        let mut current = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: &str| SatError::Dimacs {
                line,
                message: message.to_string(),
            };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('c') || trimmed.starts_with('%') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('p') {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 || parts[0] != "cnf" {
                    return Err(err("expected `p cnf <vars> <clauses>`"));
                }
                let vars = parts[1].parse().map_err(|_| err("bad variable count"))?;
                declared = parts[2].parse().map_err(|_| err("bad clause count"))?;
                inst = Some(CnfInstance::new(vars));
                continue;
            }
            let inst = inst.as_mut().ok_or_else(|| err("clause before header"))?;
            for tok in trimmed.split_whitespace() {
                let l: i32 = tok.parse().map_err(|_| err("bad literal"))?;
                if l == 0 {
                    inst.clauses.push(std::mem::take(&mut current));
                } else {
                    if l.unsigned_abs() > inst.num_vars {
                        return Err(err("literal exceeds declared variables"));
                    }
                    current.push(l);
                }
            }
        }
        let mut inst = inst.ok_or(SatError::Dimacs {
            line: 0,
            message: "missing header".into(),
        })?;
        if !current.is_empty() {
            inst.clauses.push(current);
        }
        if inst.clauses.len() != declared {
            return Err(SatError::Dimacs {
                line: 0,
                message: format!(
                    "header declares {declared} clauses, found {}",
                    inst.clauses.len()
                ),
            });
        }
        Ok(inst)
    }
}

pub fn solve(inst: &CnfInstance) -> Result<SatResult, SatError> {
    inst.solver()?.solve()
}

/// Every model of a small instance, by trying all assignments.
pub fn enumerate_exhaustive(inst: &CnfInstance) -> Vec<Vec<bool>> {
    assert!(
        inst.num_vars <= 24,
        "exhaustive enumeration is for small instances"
    );
    let n = inst.num_vars as usize;
    let mut out = Vec::new();
    for bits in 0u64..(1u64 << n) {
        let m = SatModel {
            assignment: (0..n).map(|i| bits >> i & 1 == 1).collect(),
        };
        if inst.evaluate(&m) {
            out.push(m.assignment);
        }
    }
    out
}

/// Every model, by solving and blocking the full assignment each time.
pub fn enumerate_models(inst: &CnfInstance) -> Result<Vec<Vec<bool>>, SatError> {
    let mut s = inst.solver()?;
    let mut out = Vec::new();
    while let SatResult::Sat(m) = s.solve()? {
        let block: Vec<i32> = m
            .assignment
            .iter()
            .enumerate()
            .map(|(i, v)| if *v { -(i as i32 + 1) } else { i as i32 + 1 })
            .collect();
        out.push(m.assignment);
        if block.is_empty() {
            break;
        }
        s.add_clause(&block)?;
    }
    Ok(out)
}

/// Pigeonhole instance: `pigeons` pigeons into `holes` holes, one per hole.
pub fn pigeonhole(pigeons: u32, holes: u32) -> CnfInstance {
    let var = |p: u32, h: u32| (p * holes + h + 1) as i32;
    let mut inst = CnfInstance::new(pigeons * holes);
    for p in 0..pigeons {
        inst.add_clause((0..holes).map(|h| var(p, h)).collect());
    }
    for h in 0..holes {
        for p in 0..pigeons {
            for q in p + 1..pigeons {
                inst.add_clause(vec![-var(p, h), -var(q, h)]);
            }
        }
    }
    inst
}
