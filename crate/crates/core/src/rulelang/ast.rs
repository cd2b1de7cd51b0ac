//! Expression tree for the rule language.

use serde::Serialize;

/// Binary operators, grouped by precedence class. `&&` binds tighter than
/// `||`, comparisons tighter than `&&`, arithmetic tighter than
/// comparisons; within a class everything associates left-to-right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Mul,
    Mod,
    Add,
    Sub,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    /// Higher value binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Mul | BinOp::Mod => 5,
            BinOp::Add | BinOp::Sub => 4,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 3,
            BinOp::And => 2,
            BinOp::Or => 1,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            BinOp::Mul => "*",
            BinOp::Mod => "%",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RuleExpr {
    Int(i64),
    Bool(bool),
    /// Bare identifier literal, compared by name.
    Sym(String),
    /// The reserved `None` literal: equal only to absent values.
    None,
    /// `$name` reference into the strategy being tested.
    Var(String),
    Binary {
        op: BinOp,
        lhs: Box<RuleExpr>,
        rhs: Box<RuleExpr>,
    },
}

impl RuleExpr {
    pub fn binary(op: BinOp, lhs: RuleExpr, rhs: RuleExpr) -> RuleExpr {
        RuleExpr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    fn render(&self, out: &mut String, parent_prec: u8) {
        match self {
            RuleExpr::Int(v) => out.push_str(&v.to_string()),
            RuleExpr::Bool(v) => out.push_str(if *v { "true" } else { "false" }),
            RuleExpr::Sym(name) => out.push_str(name),
            RuleExpr::None => out.push_str("None"),
            RuleExpr::Var(name) => {
                out.push('$');
                out.push_str(name);
            }
            RuleExpr::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                let need_parens = prec < parent_prec;
                if need_parens {
                    out.push('(');
                }
                // left-associative: the left child may be rendered at the
                // same level, the right child needs one level more
                lhs.render(out, prec);
                out.push(' ');
                out.push_str(op.token());
                out.push(' ');
                rhs.render(out, prec + 1);
                if need_parens {
                    out.push(')');
                }
            }
        }
    }
}

/// Pretty-print with the minimal parentheses that preserve the tree. The
/// result re-parses to an identical tree.
impl std::fmt::Display for RuleExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut out = String::new();
        self.render(&mut out, 0);
        f.write_str(&out)
    }
}

/// Runtime value a variable or literal evaluates to.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    None,
    Int(i64),
    Bool(bool),
    Sym(String),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::None => "None",
            Value::Int(_) => "integer",
            Value::Bool(_) => "boolean",
            Value::Sym(_) => "symbol",
        }
    }
}
