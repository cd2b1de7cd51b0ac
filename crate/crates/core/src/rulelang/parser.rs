//! Lexer and precedence-climbing parser for rule expressions.

use crate::error::{Error, Result};

use super::ast::{BinOp, RuleExpr};

const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Int(i64),
    Ident(String),
    Var(String),
    Op(BinOp),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Spanned {
    token: Token,
    column: usize,
}

fn syntax_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::RuleSyntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str, line: usize) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let column = i + 1;
        let c = chars[i];
        match c {
            c if c.is_whitespace() => {
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let digits: String = chars[start..i].iter().collect();
                let value: i64 = digits.parse().map_err(|_| {
                    syntax_error(line, column, format!("integer literal `{digits}` out of range"))
                })?;
                tokens.push(Spanned {
                    token: Token::Int(value),
                    column,
                });
            }
            '$' => {
                i += 1;
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                if start == i {
                    return Err(syntax_error(line, column, "`$` must be followed by a name"));
                }
                tokens.push(Spanned {
                    token: Token::Var(chars[start..i].iter().collect()),
                    column,
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push(Spanned {
                    token: Token::Ident(chars[start..i].iter().collect()),
                    column,
                });
            }
            '(' => {
                tokens.push(Spanned {
                    token: Token::LParen,
                    column,
                });
                i += 1;
            }
            ')' => {
                tokens.push(Spanned {
                    token: Token::RParen,
                    column,
                });
                i += 1;
            }
            '*' => {
                tokens.push(Spanned {
                    token: Token::Op(BinOp::Mul),
                    column,
                });
                i += 1;
            }
            '%' => {
                tokens.push(Spanned {
                    token: Token::Op(BinOp::Mod),
                    column,
                });
                i += 1;
            }
            '+' => {
                tokens.push(Spanned {
                    token: Token::Op(BinOp::Add),
                    column,
                });
                i += 1;
            }
            '-' => {
                tokens.push(Spanned {
                    token: Token::Op(BinOp::Sub),
                    column,
                });
                i += 1;
            }
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Eq),
                        column,
                    });
                    i += 2;
                } else {
                    return Err(syntax_error(line, column, "single `=`; use `==` for equality"));
                }
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Ne),
                        column,
                    });
                    i += 2;
                } else {
                    return Err(syntax_error(line, column, "single `!`; use `!=` for inequality"));
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Le),
                        column,
                    });
                    i += 2;
                } else {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Lt),
                        column,
                    });
                    i += 1;
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Ge),
                        column,
                    });
                    i += 2;
                } else {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Gt),
                        column,
                    });
                    i += 1;
                }
            }
            '&' => {
                if chars.get(i + 1) == Some(&'&') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::And),
                        column,
                    });
                    i += 2;
                } else {
                    return Err(syntax_error(line, column, "single `&`; use `&&` for logical and"));
                }
            }
            '|' => {
                if chars.get(i + 1) == Some(&'|') {
                    tokens.push(Spanned {
                        token: Token::Op(BinOp::Or),
                        column,
                    });
                    i += 2;
                } else {
                    return Err(syntax_error(line, column, "single `|`; use `||` for logical or"));
                }
            }
            other => {
                return Err(syntax_error(line, column, format!("unknown character `{other}`")));
            }
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Spanned],
    pos: usize,
    line: usize,
    end_column: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Spanned> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map(|t| t.column).unwrap_or(self.end_column)
    }

    fn parse_expr(&mut self, min_prec: u8, depth: usize) -> Result<RuleExpr> {
        if depth > MAX_DEPTH {
            return Err(syntax_error(self.line, self.here(), "expression nests too deeply"));
        }
        let mut lhs = self.parse_primary(depth)?;
        while let Some(spanned) = self.peek() {
            let op = match spanned.token {
                Token::Op(op) if op.precedence() >= min_prec => op,
                Token::Op(_) => break,
                Token::RParen => break,
                _ => {
                    return Err(syntax_error(
                        self.line,
                        spanned.column,
                        "expected an operator",
                    ))
                }
            };
            self.pos += 1;
            // left associativity: the right side must bind strictly tighter
            let rhs = self.parse_expr(op.precedence() + 1, depth + 1)?;
            lhs = RuleExpr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_primary(&mut self, depth: usize) -> Result<RuleExpr> {
        if depth > MAX_DEPTH {
            return Err(syntax_error(self.line, self.here(), "expression nests too deeply"));
        }
        let Some(spanned) = self.peek().cloned() else {
            return Err(syntax_error(
                self.line,
                self.end_column,
                "expected a value, found end of line",
            ));
        };
        self.pos += 1;
        match spanned.token {
            Token::Int(v) => Ok(RuleExpr::Int(v)),
            Token::Var(name) => Ok(RuleExpr::Var(name)),
            Token::Ident(name) => Ok(match name.as_str() {
                "true" => RuleExpr::Bool(true),
                "false" => RuleExpr::Bool(false),
                "None" => RuleExpr::None,
                _ => RuleExpr::Sym(name),
            }),
            Token::LParen => {
                let inner = self.parse_expr(1, depth + 1)?;
                match self.peek() {
                    Some(t) if t.token == Token::RParen => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    Some(t) => Err(syntax_error(self.line, t.column, "expected `)`")),
                    None => Err(syntax_error(
                        self.line,
                        self.end_column,
                        "unbalanced parenthesis: missing `)`",
                    )),
                }
            }
            Token::RParen => Err(syntax_error(
                self.line,
                spanned.column,
                "unbalanced parenthesis: unexpected `)`",
            )),
            Token::Op(op) => Err(syntax_error(
                self.line,
                spanned.column,
                format!("expected a value, found `{}`", op.token()),
            )),
        }
    }
}

/// Parse one expression. `line` is used only for error positions.
pub fn parse_expr(text: &str, line: usize) -> Result<RuleExpr> {
    let tokens = lex(text, line)?;
    if tokens.is_empty() {
        return Err(syntax_error(line, 1, "empty expression"));
    }
    let mut parser = Parser {
        tokens: &tokens,
        pos: 0,
        line,
        end_column: text.chars().count() + 1,
    };
    let expr = parser.parse_expr(1, 0)?;
    if let Some(extra) = parser.peek() {
        return Err(syntax_error(line, extra.column, "unexpected trailing input"));
    }
    Ok(expr)
}
