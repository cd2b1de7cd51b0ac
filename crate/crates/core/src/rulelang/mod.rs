//! The user-rule expression language.
//!
//! Rules are boolean expressions over strategy fields, one per line; a
//! strategy is dropped as soon as any rule evaluates to true. The default
//! rules file shipped with the fixtures encodes the three stock legality
//! rules (flash attention vs. selective recompute, recompute depth vs.
//! pipeline stages, GPU divisibility).
//!
//! Grammar, loosest to tightest binding: `||`, `&&`, comparisons
//! (`== != < <= > >=`), additive (`+ -`), multiplicative (`* %`). Equal
//! precedence associates left to right. Values are integers, booleans,
//! bare-identifier symbols, and the reserved `None` literal which equals
//! only absent values.

pub mod ast;
pub mod eval;
pub mod parser;

pub use ast::{BinOp, RuleExpr, Value};
pub use eval::{eval_bool, eval_expr, EvalError, StrategyEnv, VarEnv};
pub use parser::parse_expr;

use serde::Serialize;

use crate::catalog::TrainConfig;
use crate::error::{Error, Result};
use crate::strategy::Strategy;

/// One parsed rule with its verbatim source line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rule {
    pub name: String,
    pub expr: RuleExpr,
    pub source: String,
    pub line: usize,
}

/// Ordered collection of rules, names unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn empty() -> Self {
        RuleSet::default()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Name of the first rule that matches (evaluates true), if any.
    pub fn first_match(&self, s: &Strategy, train: &TrainConfig) -> Result<Option<&str>> {
        let env = StrategyEnv::new(s, train);
        for rule in &self.rules {
            match eval_bool(&rule.expr, &env) {
                Ok(true) => return Ok(Some(&rule.name)),
                Ok(false) => {}
                Err(e) => {
                    return Err(Error::RuleEval {
                        rule: rule.name.clone(),
                        message: e.0,
                    }
                    .in_module("rulelang", s.id.to_string()))
                }
            }
        }
        Ok(None)
    }
}

/// Parse a rules file: one rule per non-empty line, `#` starts a comment.
pub fn parse_rules(text: &str) -> Result<RuleSet> {
    let mut rules = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        if line.trim().is_empty() {
            continue;
        }
        let expr = parser::parse_expr(line, line_no)?;
        rules.push(Rule {
            name: format!("rule{}", rules.len() + 1),
            expr,
            source: line.trim().to_string(),
            line: line_no,
        });
    }
    Ok(RuleSet { rules })
}

/// Evaluate a single rule against a strategy: true means "drop".
pub fn eval_rule(rule: &Rule, s: &Strategy, train: &TrainConfig) -> Result<bool> {
    let env = StrategyEnv::new(s, train);
    eval_bool(&rule.expr, &env).map_err(|e| Error::RuleEval {
        rule: rule.name.clone(),
        message: e.0,
    })
}

/// Per-rule drop counts from a filtering pass, in rule order.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RuleFilterStats {
    pub drops: Vec<(String, u64)>,
}

impl RuleFilterStats {
    pub fn for_rules(rules: &RuleSet) -> Self {
        RuleFilterStats {
            drops: rules.rules().iter().map(|r| (r.name.clone(), 0)).collect(),
        }
    }

    pub fn record(&mut self, rule_name: &str) {
        if let Some(entry) = self.drops.iter_mut().find(|(n, _)| n == rule_name) {
            entry.1 += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.drops.iter().map(|(_, n)| n).sum()
    }
}

/// Keep only strategies that match no rule, preserving order and counting
/// drops per rule.
pub fn filter_by_rules<I>(
    strategies: I,
    rules: &RuleSet,
    train: &TrainConfig,
) -> Result<(Vec<Strategy>, RuleFilterStats)>
where
    I: IntoIterator<Item = Strategy>,
{
    let mut stats = RuleFilterStats::for_rules(rules);
    let mut kept = Vec::new();
    for s in strategies {
        match rules.first_match(&s, train)? {
            Some(name) => {
                let name = name.to_string();
                stats.record(&name);
            }
            None => kept.push(s),
        }
    }
    Ok((kept, stats))
}
