//! Integer expressions used as line-duplication factors, e.g. `(NVECS+3)/4`.

use std::collections::HashMap;

use crate::GenError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(i64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<Tok>, GenError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| GenError::Expr(src.to_string()))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/%".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(GenError::Expr(src.to_string()));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    env: &'a HashMap<String, i64>,
    src: &'a str,
}

impl Parser<'_> {
    fn err(&self) -> GenError {
        GenError::Expr(self.src.to_string())
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expr(&mut self) -> Result<i64, GenError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { lhs + rhs } else { lhs - rhs };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<i64, GenError> {
        let mut lhs = self.atom()?;
        while let Some(Tok::Op(op @ ('*' | '/' | '%'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.atom()?;
            lhs = match op {
                '*' => lhs * rhs,
                _ if rhs == 0 => return Err(GenError::Expr(format!("division by zero in `{}`", self.src))),
                '/' => lhs / rhs,
                _ => lhs % rhs,
            };
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<i64, GenError> {
        let tok = self.peek().cloned().ok_or_else(|| self.err())?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(v),
            Tok::Ident(name) => self
                .env
                .get(&name)
                .copied()
                .ok_or(GenError::UnknownName(name)),
            Tok::Op('-') => Ok(-self.atom()?),
            Tok::LParen => {
                let v = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(v)
                    }
                    _ => Err(self.err()),
                }
            }
            _ => Err(self.err()),
        }
    }
}

/// Evaluates `src` with identifiers resolved from `env`. Division truncates.
pub fn eval(src: &str, env: &HashMap<String, i64>) -> Result<i64, GenError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, env, src };
    let v = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(p.err());
    }
    Ok(v)
}
