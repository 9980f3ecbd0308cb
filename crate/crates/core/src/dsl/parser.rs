//! S-expression reader for predicate programs.
//!
//! ```text
//! expr    := "(" op arg* ")"
//! arg     := expr | string | number | symbol
//! string  := '"' ( [^"\\] | '\\' ["\\n] )* '"'
//! ```
//!
//! The full grammar with every operator is in `docs/dsl.md`.

use super::ast::{AttrKey, Comparator, Expr, PredicateProgram, Selector, SpatialPred, TemporalOp};
use super::DslError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Str(String),
    Atom(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn is_atom_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_-+.<>=!:".contains(c)
}

fn tokenize(src: &str) -> Result<Vec<Token>, DslError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            ';' => {
                while chars.peek().is_some_and(|&(_, c)| c != '\n') {
                    chars.next();
                }
            }
            '(' => {
                chars.next();
                out.push(Token { tok: Tok::Open, offset: i });
            }
            ')' => {
                chars.next();
                out.push(Token { tok: Tok::Close, offset: i });
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        None => return Err(DslError::syntax(i, "unterminated string literal")),
                        Some((_, '"')) => break,
                        Some((j, '\\')) => match chars.next() {
                            Some((_, '"')) => s.push('"'),
                            Some((_, '\\')) => s.push('\\'),
                            Some((_, 'n')) => s.push('\n'),
                            _ => return Err(DslError::syntax(j, "invalid escape sequence")),
                        },
                        Some((_, c)) => s.push(c),
                    }
                }
                out.push(Token { tok: Tok::Str(s), offset: i });
            }
            c if is_atom_char(c) => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek().filter(|(_, c)| is_atom_char(*c)) {
                    s.push(c);
                    chars.next();
                }
                out.push(Token { tok: Tok::Atom(s), offset: i });
            }
            other => return Err(DslError::syntax(i, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

/// Raw list/atom tree before operator checking.
#[derive(Debug)]
enum Sexp {
    List(Vec<Sexp>, usize),
    Str(String, usize),
    Atom(String, usize),
}

impl Sexp {
    fn offset(&self) -> usize {
        match self {
            Sexp::List(_, o) | Sexp::Str(_, o) | Sexp::Atom(_, o) => *o,
        }
    }
}

fn read(tokens: &[Token], pos: &mut usize, end: usize) -> Result<Sexp, DslError> {
    let Some(t) = tokens.get(*pos) else {
        return Err(DslError::syntax(end, "unexpected end of input"));
    };
    *pos += 1;
    match &t.tok {
        Tok::Open => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return Err(DslError::syntax(t.offset, "unclosed `(`")),
                    Some(Token { tok: Tok::Close, .. }) => {
                        *pos += 1;
                        return Ok(Sexp::List(items, t.offset));
                    }
                    Some(_) => items.push(read(tokens, pos, end)?),
                }
            }
        }
        Tok::Close => Err(DslError::syntax(t.offset, "unexpected `)`")),
        Tok::Str(s) => Ok(Sexp::Str(s.clone(), t.offset)),
        Tok::Atom(a) => Ok(Sexp::Atom(a.clone(), t.offset)),
    }
}

fn arity(op: &str, expected: &str, got: usize, offset: usize) -> DslError {
    DslError::Arity {
        op: op.to_string(),
        expected: expected.to_string(),
        got,
        offset,
    }
}

fn string_arg(op: &str, args: &[Sexp], offset: usize) -> Result<String, DslError> {
    match args {
        [Sexp::Str(s, _)] => Ok(s.clone()),
        [other] => Err(DslError::syntax(
            other.offset(),
            format!("`{op}` expects a string literal"),
        )),
        _ => Err(arity(op, "1", args.len(), offset)),
    }
}

fn exprs(args: &[Sexp]) -> Result<Vec<Expr>, DslError> {
    args.iter().map(to_expr).collect()
}

fn to_expr(s: &Sexp) -> Result<Expr, DslError> {
    let (items, offset) = match s {
        Sexp::List(items, o) => (items, *o),
        other => {
            return Err(DslError::syntax(
                other.offset(),
                "expected a parenthesised expression",
            ))
        }
    };
    let Some((head, args)) = items.split_first() else {
        return Err(DslError::syntax(offset, "empty expression `()`"));
    };
    let Sexp::Atom(op, op_offset) = head else {
        return Err(DslError::syntax(head.offset(), "operator must be a symbol"));
    };
    let op = op.as_str();
    let fixed = |n: usize| -> Result<Vec<Expr>, DslError> {
        if args.len() != n {
            return Err(arity(op, &n.to_string(), args.len(), offset));
        }
        exprs(args)
    };

    if let Some(pred) = SpatialPred::from_name(op) {
        let mut v = fixed(2)?;
        let target = v.pop().expect("two args");
        let subject = v.pop().expect("two args");
        return Ok(Expr::Spatial {
            pred,
            subject: Box::new(subject),
            target: Box::new(target),
        });
    }
    if let Some(t) = TemporalOp::from_name(op) {
        let n = t.arity();
        let (args, span) = match (t, args.last()) {
            (TemporalOp::Moved, Some(Sexp::Atom(a, o))) if args.len() == n + 1 => {
                let span = a
                    .parse::<u32>()
                    .map_err(|_| DslError::syntax(*o, format!("invalid span `{a}`")))?;
                (&args[..n], Some(span))
            }
            _ => (args, None),
        };
        if args.len() != n {
            let expected = if t == TemporalOp::Moved { "1 or 2" } else { "2" };
            return Err(arity(op, if n == 1 { expected } else { "2" }, args.len(), offset));
        }
        return Ok(Expr::Temporal {
            op: t,
            args: exprs(args)?,
            span,
        });
    }
    if let Some(sel) = Selector::from_name(op) {
        return Ok(Expr::Select {
            selector: sel,
            args: fixed(sel.arity())?,
        });
    }
    match op {
        "all" => {
            fixed(0)?;
            Ok(Expr::All)
        }
        "node" => Ok(Expr::Node(string_arg(op, args, offset)?)),
        "category" => Ok(Expr::Category(string_arg(op, args, offset)?)),
        "select" => Ok(Expr::Semantic(string_arg(op, args, offset)?)),
        "not" => Ok(Expr::Not(Box::new(fixed(1)?.pop().expect("one arg")))),
        "and" | "or" => {
            if args.is_empty() {
                return Err(arity(op, "at least 1", 0, offset));
            }
            let v = exprs(args)?;
            Ok(if op == "and" { Expr::And(v) } else { Expr::Or(v) })
        }
        "attr" => {
            let [Sexp::Atom(k, ko), Sexp::Atom(c, co), Sexp::Atom(v, vo)] = args else {
                return Err(arity(op, "3 (key comparator number)", args.len(), offset));
            };
            let key = AttrKey::from_name(k)
                .ok_or_else(|| DslError::syntax(*ko, format!("unknown attribute `{k}`")))?;
            let cmp = Comparator::from_name(c)
                .ok_or_else(|| DslError::syntax(*co, format!("unknown comparator `{c}`")))?;
            let value = v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| DslError::syntax(*vo, format!("invalid number `{v}`")))?;
            Ok(Expr::Attr { key, cmp, value })
        }
        _ => Err(DslError::UnknownPredicate {
            name: op.to_string(),
            offset: *op_offset,
        }),
    }
}

/// Parses the S-expression form of a program.
pub fn parse_program(src: &str) -> Result<PredicateProgram, DslError> {
    let tokens = tokenize(src)?;
    let mut pos = 0;
    let sexp = read(&tokens, &mut pos, src.len())?;
    if let Some(extra) = tokens.get(pos) {
        return Err(DslError::syntax(
            extra.offset,
            "trailing input after expression",
        ));
    }
    Ok(PredicateProgram {
        root: to_expr(&sexp)?,
    })
}

/// Accepts either the S-expression form or the JSON AST encoding (any
/// source whose first non-blank character is `{`).
pub fn parse_any(src: &str) -> Result<PredicateProgram, DslError> {
    if src.trim_start().starts_with('{') {
        let root: Expr = serde_json::from_str(src)
            .map_err(|e| DslError::syntax(0, format!("invalid JSON program: {e}")))?;
        return Ok(PredicateProgram { root });
    }
    parse_program(src)
}
