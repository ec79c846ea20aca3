//! Annotated template sources.
//!
//! Two kinds of markers are recognized:
//!
//! * `#SUBST NAME ${VAR}` (alone on a line) binds `NAME` to the value of the
//!   variant variable `VAR`, or to a literal integer (`#SUBST NAME 4`). Every
//!   later occurrence of `NAME` in the template text is replaced by the value.
//! * `#UNROLL#<code>#<expr>` duplicates `<code>` `expr` times, replacing `@`
//!   with the copy index `0..expr`. Indentation before the marker is kept.
//!   `expr` may reference bound names, e.g. `#(NVECS+3)/4`.

use std::collections::HashMap;

use crate::expr;
use crate::GenError;

const SUBST: &str = "#SUBST";
const UNROLL: &str = "#UNROLL#";

#[derive(Debug, Clone)]
pub struct Template {
    name: String,
    src: String,
}

impl Template {
    pub fn new(name: impl Into<String>, src: impl Into<String>) -> Self {
        Self { name: name.into(), src: src.into() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Renders one variant. `vars` holds the variant variables (`CHUNKHEIGHT`,
    /// `BLOCKDIM`, ...) that `#SUBST` lines may refer to.
    pub fn render(&self, vars: &HashMap<String, i64>) -> Result<String, GenError> {
        let mut bindings: Vec<(String, i64)> = Vec::new();
        let mut body: Vec<(usize, &str)> = Vec::new();

        for (lineno, line) in self.src.lines().enumerate() {
            let trimmed = line.trim_start();
            if let Some(rest) = trimmed.strip_prefix(SUBST) {
                let (name, value) = self.parse_subst(rest, lineno + 1, vars)?;
                bindings.push((name, value));
            } else {
                body.push((lineno + 1, line));
            }
        }
        // longest names first so that e.g. NVECS2 is not clobbered by NVECS
        bindings.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        let env: HashMap<String, i64> = vars
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .chain(bindings.iter().cloned())
            .collect();

        let mut out = String::with_capacity(self.src.len() * 2);
        for (lineno, line) in body {
            let mut text = line.to_string();
            for (name, value) in &bindings {
                if text.contains(name.as_str()) {
                    text = replace_name(&text, name, &value.to_string());
                }
            }
            match text.find(UNROLL) {
                Some(pos) => {
                    let indent = &text[..pos];
                    let rest = &text[pos + UNROLL.len()..];
                    let split = rest.rfind('#').ok_or_else(|| GenError::Syntax {
                        template: self.name.clone(),
                        line: lineno,
                        msg: "unroll marker without a trailing #<factor>".into(),
                    })?;
                    let code = &rest[..split];
                    let factor = expr::eval(&rest[split + 1..], &env).map_err(|e| GenError::Syntax {
                        template: self.name.clone(),
                        line: lineno,
                        msg: e.to_string(),
                    })?;
                    if factor < 0 {
                        return Err(GenError::Syntax {
                            template: self.name.clone(),
                            line: lineno,
                            msg: format!("negative unroll factor {factor}"),
                        });
                    }
                    for copy in 0..factor {
                        out.push_str(indent);
                        out.push_str(&code.replace('@', &copy.to_string()));
                        out.push('\n');
                    }
                }
                None => {
                    out.push_str(&text);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    fn parse_subst(
        &self,
        rest: &str,
        line: usize,
        vars: &HashMap<String, i64>,
    ) -> Result<(String, i64), GenError> {
        let syntax = |msg: &str| GenError::Syntax {
            template: self.name.clone(),
            line,
            msg: msg.to_string(),
        };
        let mut parts = rest.split_whitespace();
        let name = parts.next().ok_or_else(|| syntax("missing substitution name"))?;
        let value = parts.next().ok_or_else(|| syntax("missing substitution value"))?;
        if parts.next().is_some() {
            return Err(syntax("trailing tokens after substitution"));
        }
        let value = if let Some(var) = value.strip_prefix("${").and_then(|v| v.strip_suffix('}')) {
            *vars.get(var).ok_or_else(|| GenError::UnknownName(var.to_string()))?
        } else {
            value.parse().map_err(|_| syntax("substitution value is neither ${VAR} nor an integer"))?
        };
        Ok((name.to_string(), value))
    }
}

/// Replaces `name` where it is not glued to letters or digits. Underscores
/// count as separators so that `sell_NVECS` is substituted.
fn replace_name(text: &str, name: &str, value: &str) -> String {
    let glued = |c: Option<char>| c.is_some_and(|c| c.is_ascii_alphanumeric());
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find(name) {
        let before = if pos > 0 { rest[..pos].chars().last() } else { out.chars().last() };
        let after = rest[pos + name.len()..].chars().next();
        out.push_str(&rest[..pos]);
        if glued(before) || glued(after) {
            out.push_str(name);
        } else {
            out.push_str(value);
        }
        rest = &rest[pos + name.len()..];
    }
    out.push_str(rest);
    out
}
