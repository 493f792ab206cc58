use std::collections::{BTreeMap, BTreeSet};

use super::{
    validate, Activity, ActivityId, ActivityKind, Invoke, OpRef, PickBranch, WorkflowDef,
    WorkflowError,
};

const DEFAULT_MAX_ITER: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u32),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, WorkflowError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            col += i - start;
            let text: String = chars[start..i].iter().collect();
            let n = text.parse().map_err(|_| WorkflowError::Syntax {
                line: tl,
                col: tc,
                message: format!("integer `{text}` out of range"),
            })?;
            out.push(Token {
                tok: Tok::Int(n),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Token {
                tok: Tok::Sym("->"),
                line: tl,
                col: tc,
            });
            i += 2;
            col += 2;
            continue;
        }
        let sym = match c {
            '{' => "{",
            '}' => "}",
            '(' => "(",
            ')' => ")",
            ';' => ";",
            ',' => ",",
            '.' => ".",
            ':' => ":",
            '=' => "=",
            other => {
                return Err(WorkflowError::Syntax {
                    line: tl,
                    col: tc,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Token {
            tok: Tok::Sym(sym),
            line: tl,
            col: tc,
        });
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    structured_counts: BTreeMap<&'static str, usize>,
    atomic_counts: BTreeMap<String, usize>,
    partners: BTreeSet<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, WorkflowError> {
        let t = &self.toks[self.pos];
        Err(WorkflowError::Syntax {
            line: t.line,
            col: t.col,
            message: message.into(),
        })
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_sym(&mut self, s: &'static str) -> Result<(), WorkflowError> {
        if self.peek() == &Tok::Sym(s) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn eat_sym(&mut self, s: &'static str) -> bool {
        if self.peek() == &Tok::Sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, WorkflowError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), WorkflowError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            other => self.err(format!("expected `{kw}`, found {}", describe(other))),
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn structured_id(&mut self, kind: &'static str, explicit: Option<String>) -> ActivityId {
        let n = self.structured_counts.entry(kind).or_insert(0);
        *n += 1;
        ActivityId(explicit.unwrap_or_else(|| format!("{kind}{n}")))
    }

    fn atomic_id(&mut self, base: String) -> ActivityId {
        let n = self.atomic_counts.entry(base.clone()).or_insert(0);
        *n += 1;
        if *n == 1 {
            ActivityId(base)
        } else {
            ActivityId(format!("{base}#{n}"))
        }
    }

    fn optional_name(&mut self) -> Option<String> {
        if let Tok::Ident(s) = self.peek().clone() {
            self.bump();
            Some(s)
        } else {
            None
        }
    }

    fn cond_vars(&mut self) -> Result<BTreeSet<String>, WorkflowError> {
        self.expect_sym("(")?;
        let mut vars = BTreeSet::new();
        vars.insert(self.ident()?);
        while self.eat_sym(",") {
            vars.insert(self.ident()?);
        }
        self.expect_sym(")")?;
        Ok(vars)
    }

    fn in_out(&mut self) -> Result<(String, String), WorkflowError> {
        self.expect_sym("(")?;
        self.keyword("in")?;
        self.expect_sym("=")?;
        let input = self.ident()?;
        self.expect_sym(",")?;
        self.keyword("out")?;
        self.expect_sym("=")?;
        let output = self.ident()?;
        self.expect_sym(")")?;
        Ok((input, output))
    }

    fn block(&mut self) -> Result<Vec<Activity>, WorkflowError> {
        self.expect_sym("{")?;
        let mut items = Vec::new();
        while !self.eat_sym("}") {
            if self.peek() == &Tok::Eof {
                return self.err("unterminated block");
            }
            items.push(self.activity()?);
        }
        Ok(items)
    }

    fn activity(&mut self) -> Result<Activity, WorkflowError> {
        let kw = match self.peek().clone() {
            Tok::Ident(s) => s,
            other => return self.err(format!("expected activity, found {}", describe(&other))),
        };
        self.bump();
        match kw.as_str() {
            "seq" | "flow" => {
                let name = if matches!(self.peek(), Tok::Ident(_)) {
                    self.optional_name()
                } else {
                    None
                };
                let kind: &'static str = if kw == "seq" { "seq" } else { "flow" };
                let id = self.structured_id(kind, name);
                let items = self.block()?;
                let kind = if kw == "seq" {
                    ActivityKind::Sequence(items)
                } else {
                    ActivityKind::Flow(items)
                };
                Ok(Activity { id, kind })
            }
            "pick" => {
                let name = self.optional_name();
                let id = self.structured_id("pick", name);
                self.expect_sym("{")?;
                let mut branches = Vec::new();
                while !self.eat_sym("}") {
                    self.keyword("on")?;
                    let event = self.ident()?;
                    self.expect_sym(":")?;
                    let body = self.activity()?;
                    branches.push(PickBranch { event, body });
                }
                Ok(Activity {
                    id,
                    kind: ActivityKind::Pick(branches),
                })
            }
            "if" => {
                let name = self.optional_name();
                let id = self.structured_id("if", name);
                let cond_vars = self.cond_vars()?;
                let then_branch = Box::new(self.activity()?);
                let else_branch = if self.eat_keyword("else") {
                    Some(Box::new(self.activity()?))
                } else {
                    None
                };
                Ok(Activity {
                    id,
                    kind: ActivityKind::If {
                        cond_vars,
                        then_branch,
                        else_branch,
                    },
                })
            }
            "while" => {
                let name = self.optional_name();
                let id = self.structured_id("while", name);
                let cond_vars = self.cond_vars()?;
                let max_iter = if self.eat_keyword("max") {
                    match self.bump() {
                        Tok::Int(n) => n,
                        other => {
                            self.pos -= 1;
                            return self.err(format!(
                                "expected iteration bound, found {}",
                                describe(&other)
                            ));
                        }
                    }
                } else {
                    DEFAULT_MAX_ITER
                };
                let body = Box::new(self.activity()?);
                Ok(Activity {
                    id,
                    kind: ActivityKind::While {
                        cond_vars,
                        max_iter,
                        body,
                    },
                })
            }
            "receive" => {
                self.expect_sym("(")?;
                let var = self.ident()?;
                self.expect_sym(")")?;
                let id = self.atomic_id(format!("receive_{var}"));
                Ok(Activity {
                    id,
                    kind: ActivityKind::Receive { var },
                })
            }
            "assign" => {
                self.expect_sym("(")?;
                let from = self.ident()?;
                self.expect_sym("->")?;
                let to = self.ident()?;
                self.expect_sym(")")?;
                let id = self.atomic_id(format!("assign_{from}_{to}"));
                Ok(Activity {
                    id,
                    kind: ActivityKind::Assign { from, to },
                })
            }
            "invoke" => {
                let partner = self.ident()?;
                self.expect_sym(".")?;
                let op = self.ident()?;
                let (input, output) = self.in_out()?;
                let idempotent = !self.eat_keyword("nonidem");
                let compensation = if self.eat_keyword("comp") {
                    let partner = self.ident()?;
                    self.expect_sym(".")?;
                    let op = self.ident()?;
                    self.partners.insert(partner.clone());
                    Some(OpRef { partner, op })
                } else {
                    None
                };
                self.partners.insert(partner.clone());
                let id = self.atomic_id(op.clone());
                Ok(Activity {
                    id,
                    kind: ActivityKind::Invoke(Invoke {
                        partner,
                        op,
                        input,
                        output,
                        idempotent,
                        compensation,
                    }),
                })
            }
            "local" => {
                let op = self.ident()?;
                let (input, output) = self.in_out()?;
                let id = self.atomic_id(op.clone());
                Ok(Activity {
                    id,
                    kind: ActivityKind::LocalCall { op, input, output },
                })
            }
            "terminate" => {
                let id = self.atomic_id("terminate".into());
                Ok(Activity {
                    id,
                    kind: ActivityKind::Terminate,
                })
            }
            other => {
                self.pos -= 1;
                self.err(format!("unknown activity `{other}`"))
            }
        }
    }

    fn workflow(&mut self) -> Result<WorkflowDef, WorkflowError> {
        self.keyword("workflow")?;
        let name = self.ident()?;
        self.expect_sym("{")?;
        let mut variables = BTreeSet::new();
        while self.eat_keyword("var") {
            variables.insert(self.ident()?);
            while self.eat_sym(",") {
                variables.insert(self.ident()?);
            }
            self.expect_sym(";")?;
        }
        let root = if self.peek() == &Tok::Sym("}") {
            Activity {
                id: self.structured_id("seq", None),
                kind: ActivityKind::Sequence(Vec::new()),
            }
        } else {
            self.activity()?
        };
        self.expect_sym("}")?;
        if self.peek_at(0) != &Tok::Eof {
            return self.err("trailing input after workflow");
        }
        Ok(WorkflowDef {
            name,
            variables,
            partners: std::mem::take(&mut self.partners),
            root,
        })
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(n) => format!("`{n}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parse and validate workflow source text.
pub fn parse_workflow(source: &str) -> Result<WorkflowDef, WorkflowError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        pos: 0,
        structured_counts: BTreeMap::new(),
        atomic_counts: BTreeMap::new(),
        partners: BTreeSet::new(),
    };
    let def = p.workflow()?;
    validate(&def)?;
    Ok(def)
}
