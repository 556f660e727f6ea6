//! Reader for the numeric subset of MATPOWER `.m` case files.
//!
//! Only `mpc.baseMVA`, `mpc.bus` and `mpc.branch` are interpreted. Other
//! `mpc.*` assignments (gen, gencost, version, ...) are skipped. `%` starts a
//! comment that runs to the end of the line.

use super::{Branch, Bus, BusType, CaseError, Network};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Number(f64),
    Str,
    Equals,
    Semicolon,
    Comma,
    Newline,
    Open(char),
    Close(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> CaseError {
    CaseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, CaseError> {
    let mut out = Vec::new();
    for (li, raw) in text.lines().enumerate() {
        let line = li + 1;
        let chars: Vec<char> = raw.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let ch = chars[i];
            let column = i + 1;
            let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, column });
            match ch {
                '%' => break,
                c if c.is_whitespace() => {
                    i += 1;
                }
                '=' => {
                    push(&mut out, Tok::Equals);
                    i += 1;
                }
                ';' => {
                    push(&mut out, Tok::Semicolon);
                    i += 1;
                }
                ',' => {
                    push(&mut out, Tok::Comma);
                    i += 1;
                }
                '[' | '{' | '(' => {
                    push(&mut out, Tok::Open(ch));
                    i += 1;
                }
                ']' | '}' | ')' => {
                    push(&mut out, Tok::Close(ch));
                    i += 1;
                }
                '\'' | '"' => {
                    let end = chars[i + 1..]
                        .iter()
                        .position(|&c| c == ch)
                        .ok_or_else(|| syntax(line, column, "unterminated string"))?;
                    push(&mut out, Tok::Str);
                    i += end + 2;
                }
                '.' if chars[i..].starts_with(&['.', '.', '.']) => break,
                c if c.is_ascii_digit()
                    || (matches!(c, '-' | '+' | '.')
                        && chars
                            .get(i + 1)
                            .is_some_and(|n| n.is_ascii_digit() || matches!(n, '.' | 'I'))) =>
                {
                    let start = i;
                    i += 1;
                    while i < chars.len() {
                        let c = chars[i];
                        let exp_sign = (c == '-' || c == '+') && matches!(chars[i - 1], 'e' | 'E');
                        if c.is_ascii_alphanumeric() || c == '.' || exp_sign {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    let s: String = chars[start..i].iter().collect();
                    let value = match s.as_str() {
                        "-Inf" => f64::NEG_INFINITY,
                        "+Inf" => f64::INFINITY,
                        _ => s
                            .parse::<f64>()
                            .map_err(|_| syntax(line, column, format!("malformed number '{s}'")))?,
                    };
                    push(&mut out, Tok::Number(value));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len()
                        && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.')
                    {
                        i += 1;
                    }
                    let word: String = chars[start..i].iter().collect();
                    let tok = match word.as_str() {
                        "Inf" | "inf" => Tok::Number(f64::INFINITY),
                        "NaN" | "nan" => Tok::Number(f64::NAN),
                        _ => Tok::Word(word),
                    };
                    push(&mut out, tok);
                }
                _ => return Err(syntax(line, column, format!("unexpected character '{ch}'"))),
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line,
            column: chars.len() + 1,
        });
    }
    Ok(out)
}

/// A numeric row together with the position of its first element.
struct Row {
    values: Vec<f64>,
    line: usize,
    column: usize,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn end_position(&self) -> (usize, usize) {
        self.toks.last().map_or((1, 1), |t| (t.line, t.column))
    }

    fn skip_newlines(&mut self) {
        while self.peek().is_some_and(|t| t.tok == Tok::Newline) {
            self.pos += 1;
        }
    }

    fn matrix(&mut self, open: &Token) -> Result<Vec<Row>, CaseError> {
        let mut rows = Vec::new();
        let mut current: Option<Row> = None;
        loop {
            let Some(t) = self.next() else {
                return Err(syntax(open.line, open.column, "unterminated matrix"));
            };
            match t.tok {
                Tok::Number(v) => current
                    .get_or_insert(Row {
                        values: Vec::new(),
                        line: t.line,
                        column: t.column,
                    })
                    .values
                    .push(v),
                Tok::Comma => {}
                Tok::Semicolon | Tok::Newline => rows.extend(current.take()),
                Tok::Close(']') => {
                    rows.extend(current.take());
                    return Ok(rows);
                }
                _ => return Err(syntax(t.line, t.column, "expected a number inside matrix")),
            }
        }
    }

    fn skip_group(&mut self, open: &Token) -> Result<(), CaseError> {
        let mut depth = 1;
        while depth > 0 {
            let Some(t) = self.next() else {
                return Err(syntax(open.line, open.column, "unterminated bracket"));
            };
            match t.tok {
                Tok::Open(_) => depth += 1,
                Tok::Close(_) => depth -= 1,
                _ => {}
            }
        }
        Ok(())
    }
}

fn as_int(row: &Row, col: usize, what: &str) -> Result<i64, CaseError> {
    let v = row.values[col];
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(syntax(
            row.line,
            row.column,
            format!("{what} must be an integer, got {v}"),
        ));
    }
    Ok(v as i64)
}

pub fn parse_matpower(text: &str) -> Result<Network, CaseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut base_mva = None;
    let mut bus_rows = None;
    let mut branch_rows = None;

    while let Some(t) = p.next() {
        let Tok::Word(name) = &t.tok else { continue };
        let Some(field) = name.strip_prefix("mpc.") else {
            continue;
        };
        if !p.peek().is_some_and(|n| n.tok == Tok::Equals) {
            continue;
        }
        p.pos += 1;
        p.skip_newlines();
        let Some(value) = p.next() else {
            let (line, column) = p.end_position();
            return Err(syntax(
                line,
                column,
                format!("missing value for mpc.{field}"),
            ));
        };
        match (field, &value.tok) {
            ("baseMVA", Tok::Number(v)) => base_mva = Some(*v),
            ("baseMVA", _) => {
                return Err(syntax(
                    value.line,
                    value.column,
                    "mpc.baseMVA must be a number",
                ))
            }
            ("bus", Tok::Open('[')) => bus_rows = Some(p.matrix(&value)?),
            ("branch", Tok::Open('[')) => branch_rows = Some(p.matrix(&value)?),
            ("bus" | "branch", _) => {
                return Err(syntax(
                    value.line,
                    value.column,
                    format!("mpc.{field} must be a matrix"),
                ))
            }
            (_, Tok::Open(_)) => p.skip_group(&value)?,
            _ => {}
        }
    }

    let (line, column) = p.end_position();
    let base_mva = base_mva.ok_or_else(|| syntax(line, column, "missing mpc.baseMVA"))?;
    let bus_rows = bus_rows.ok_or_else(|| syntax(line, column, "missing mpc.bus"))?;
    let branch_rows = branch_rows.ok_or_else(|| syntax(line, column, "missing mpc.branch"))?;

    let mut buses = Vec::with_capacity(bus_rows.len());
    for row in &bus_rows {
        if row.values.len() < 9 {
            return Err(syntax(
                row.line,
                row.column,
                format!(
                    "bus row needs at least 9 columns, found {}",
                    row.values.len()
                ),
            ));
        }
        let id = as_int(row, 0, "bus_i")?;
        let id = u32::try_from(id)
            .map_err(|_| syntax(row.line, row.column, format!("bus id {id} out of range")))?;
        let bus_type = match as_int(row, 1, "bus type")? {
            1 => BusType::Pq,
            2 => BusType::Pv,
            3 => BusType::Slack,
            code => return Err(CaseError::BusType { id, code }),
        };
        let v = &row.values;
        buses.push(Bus {
            id,
            index: buses.len(),
            bus_type,
            shunt_g: v[4] / base_mva,
            shunt_b: v[5] / base_mva,
            vm_init: v[7],
            va_init: v[8].to_radians(),
        });
    }

    let index_of: std::collections::HashMap<u32, usize> =
        buses.iter().map(|b| (b.id, b.index)).collect();
    let mut branches = Vec::with_capacity(branch_rows.len());
    for (k, row) in branch_rows.iter().enumerate() {
        if row.values.len() < 11 {
            return Err(syntax(
                row.line,
                row.column,
                format!(
                    "branch row needs at least 11 columns, found {}",
                    row.values.len()
                ),
            ));
        }
        let lookup = |col: usize| -> Result<usize, CaseError> {
            let id = as_int(row, col, "bus reference")?;
            u32::try_from(id)
                .ok()
                .and_then(|id| index_of.get(&id).copied())
                .ok_or(CaseError::UnknownBus {
                    branch: k,
                    bus: id.clamp(0, u32::MAX as i64) as u32,
                })
        };
        let (from_idx, to_idx) = (lookup(0)?, lookup(1)?);
        let v = &row.values;
        branches.push(Branch::new(
            from_idx,
            to_idx,
            v[2],
            v[3],
            v[4],
            v[8],
            v[9].to_radians(),
            v[10] != 0.0,
        ));
    }

    Network::new(buses, branches, base_mva)
}
