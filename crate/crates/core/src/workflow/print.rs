use std::fmt::Write;

use super::{Activity, ActivityKind, WorkflowDef};

/// Render a workflow back into DSL source. Structured activities are printed
/// with their ids so that reparsing reproduces the same AST.
pub fn pretty_print(def: &WorkflowDef) -> String {
    let mut out = String::new();
    writeln!(out, "workflow {} {{", def.name).unwrap();
    for v in &def.variables {
        writeln!(out, "  var {v};").unwrap();
    }
    print_activity(&def.root, 1, &mut out);
    out.push_str("}\n");
    out
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn vars(set: &std::collections::BTreeSet<String>) -> String {
    set.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn print_activity(a: &Activity, depth: usize, out: &mut String) {
    indent(depth, out);
    print_inline(a, depth, out);
    out.push('\n');
}

fn print_inline(a: &Activity, depth: usize, out: &mut String) {
    match &a.kind {
        ActivityKind::Receive { var } => write!(out, "receive({var})").unwrap(),
        ActivityKind::Assign { from, to } => write!(out, "assign({from} -> {to})").unwrap(),
        ActivityKind::LocalCall { op, input, output } => {
            write!(out, "local {op}(in={input}, out={output})").unwrap()
        }
        ActivityKind::Invoke(inv) => {
            write!(
                out,
                "invoke {}.{}(in={}, out={})",
                inv.partner, inv.op, inv.input, inv.output
            )
            .unwrap();
            if !inv.idempotent {
                out.push_str(" nonidem");
            }
            if let Some(c) = &inv.compensation {
                write!(out, " comp {c}").unwrap();
            }
        }
        ActivityKind::Terminate => out.push_str("terminate"),
        ActivityKind::Sequence(items) | ActivityKind::Flow(items) => {
            let kw = if matches!(a.kind, ActivityKind::Sequence(_)) {
                "seq"
            } else {
                "flow"
            };
            writeln!(out, "{kw} {} {{", a.id).unwrap();
            for item in items {
                print_activity(item, depth + 1, out);
            }
            indent(depth, out);
            out.push('}');
        }
        ActivityKind::Pick(branches) => {
            writeln!(out, "pick {} {{", a.id).unwrap();
            for b in branches {
                indent(depth + 1, out);
                write!(out, "on {}: ", b.event).unwrap();
                print_inline(&b.body, depth + 1, out);
                out.push('\n');
            }
            indent(depth, out);
            out.push('}');
        }
        ActivityKind::If {
            cond_vars,
            then_branch,
            else_branch,
        } => {
            write!(out, "if {} ({}) ", a.id, vars(cond_vars)).unwrap();
            print_inline(then_branch, depth, out);
            if let Some(e) = else_branch {
                out.push_str(" else ");
                print_inline(e, depth, out);
            }
        }
        ActivityKind::While {
            cond_vars,
            max_iter,
            body,
        } => {
            write!(out, "while {} ({}) max {max_iter} ", a.id, vars(cond_vars)).unwrap();
            print_inline(body, depth, out);
        }
    }
}
