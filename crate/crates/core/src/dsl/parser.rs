use super::DslError;

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Num(f64),
    Str(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(String),
    Bool(bool),
    Col(String),
    Neg(Box<Expr>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    In(Box<Expr>, Vec<Literal>),
    SafeDiv(Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
    Log1p(Box<Expr>),
    IsMissing(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, msg: impl Into<String>) -> DslError {
        DslError::Parse {
            pos: self.pos,
            message: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>, DslError> {
        let mut out = Vec::new();
        loop {
            let rest = &self.src[self.pos..];
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            let start = self.pos;
            let Some(c) = trimmed.chars().next() else {
                out.push((start, Tok::Eof));
                return Ok(out);
            };
            let tok = if c.is_ascii_digit() || (c == '.' && trimmed[1..].starts_with(|d: char| d.is_ascii_digit())) {
                self.number(trimmed)?
            } else if c == '\'' || c == '"' {
                self.string(trimmed, c)?
            } else if c.is_alphabetic() || c == '_' {
                let len = trimmed
                    .find(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
                    .unwrap_or(trimmed.len());
                self.pos += len;
                Tok::Ident(trimmed[..len].to_string())
            } else {
                const OPS: [&str; 15] = [
                    "==", "!=", "<=", ">=", "<", ">", "+", "-", "*", "(", ")", "[", "]", ",", "/",
                ];
                let op = OPS
                    .iter()
                    .find(|op| trimmed.starts_with(**op))
                    .ok_or_else(|| self.err(format!("unexpected character {c:?}")))?;
                if *op == "/" {
                    return Err(self.err("use safe_div(a, b) for division"));
                }
                self.pos += op.len();
                Tok::Op(op)
            };
            out.push((start, tok));
        }
    }

    fn number(&mut self, s: &str) -> Result<Tok, DslError> {
        let mut len = 0;
        let bytes = s.as_bytes();
        while len < bytes.len() && (bytes[len].is_ascii_digit() || bytes[len] == b'.') {
            len += 1;
        }
        if len < bytes.len() && (bytes[len] == b'e' || bytes[len] == b'E') {
            let mut j = len + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                len = j;
            }
        }
        let text = &s[..len];
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(format!("bad number {text:?}")))?;
        self.pos += len;
        Ok(Tok::Num(v))
    }

    fn string(&mut self, s: &str, quote: char) -> Result<Tok, DslError> {
        let mut out = String::new();
        let mut chars = s.char_indices().skip(1);
        while let Some((i, ch)) = chars.next() {
            match ch {
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c if c == quote => {
                    self.pos += i + 1;
                    return Ok(Tok::Str(out));
                }
                c => out.push(c),
            }
        }
        Err(self.err("unterminated string literal"))
    }
}

pub(super) struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

pub(super) const KEYWORDS: [&str; 9] = ["if", "then", "else", "and", "or", "not", "in", "true", "false"];

impl Parser {
    pub(super) fn parse(src: &str) -> Result<Expr, DslError> {
        let toks = Lexer { src, pos: 0 }.tokens()?;
        let mut p = Parser { toks, at: 0 };
        let e = p.expr()?;
        if p.peek() != &Tok::Eof {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn err(&self, msg: impl Into<String>) -> DslError {
        DslError::Parse {
            pos: self.toks[self.at].0,
            message: msg.into(),
        }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if t != Tok::Eof {
            self.at += 1;
        }
        t
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(s) if s == kw) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn eat_op(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Tok::Op(o) if *o == op) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), DslError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{kw}`")))
        }
    }

    fn expect_op(&mut self, op: &str) -> Result<(), DslError> {
        if self.eat_op(op) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        if self.eat_kw("if") {
            let cond = self.expr()?;
            self.expect_kw("then")?;
            let a = self.expr()?;
            self.expect_kw("else")?;
            let b = self.expr()?;
            return Ok(Expr::If(Box::new(cond), Box::new(a), Box::new(b)));
        }
        self.or()
    }

    fn or(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.and()?;
        while self.eat_kw("or") {
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.not()?;
        while self.eat_kw("and") {
            let rhs = self.not()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, DslError> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, DslError> {
        let lhs = self.additive()?;
        if self.eat_kw("in") {
            self.expect_op("[")?;
            let mut items = Vec::new();
            if !self.eat_op("]") {
                loop {
                    items.push(self.literal()?);
                    if self.eat_op("]") {
                        break;
                    }
                    self.expect_op(",")?;
                }
            }
            return Ok(Expr::In(Box::new(lhs), items));
        }
        let op = match self.peek() {
            Tok::Op("==") => CmpOp::Eq,
            Tok::Op("!=") => CmpOp::Ne,
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.additive()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn literal(&mut self) -> Result<Literal, DslError> {
        let neg = self.eat_op("-");
        match self.bump() {
            Tok::Num(v) => Ok(Literal::Num(if neg { -v } else { v })),
            Tok::Str(s) if !neg => Ok(Literal::Str(s)),
            _ => Err(self.err("expected a number or string literal")),
        }
    }

    fn additive(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = if self.eat_op("+") {
                ArithOp::Add
            } else if self.eat_op("-") {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.multiplicative()?;
            lhs = Expr::Arith(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        while self.eat_op("*") {
            let rhs = self.unary()?;
            lhs = Expr::Arith(ArithOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.eat_op("-") {
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.primary()
    }

    fn args(&mut self, name: &str, n: usize) -> Result<Vec<Expr>, DslError> {
        self.expect_op("(")?;
        let mut args = Vec::new();
        if !self.eat_op(")") {
            loop {
                args.push(self.expr()?);
                if self.eat_op(")") {
                    break;
                }
                self.expect_op(",")?;
            }
        }
        if args.len() != n {
            return Err(self.err(format!("{name} takes {n} argument(s), got {}", args.len())));
        }
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::Op("(") => {
                let e = self.expr()?;
                self.expect_op(")")?;
                Ok(e)
            }
            Tok::Ident(id) => match id.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                "safe_div" => {
                    let mut a = self.args("safe_div", 2)?;
                    let d = a.pop().unwrap();
                    Ok(Expr::SafeDiv(Box::new(a.pop().unwrap()), Box::new(d)))
                }
                "clamp" => {
                    let mut a = self.args("clamp", 3)?;
                    let hi = a.pop().unwrap();
                    let lo = a.pop().unwrap();
                    Ok(Expr::Clamp(Box::new(a.pop().unwrap()), Box::new(lo), Box::new(hi)))
                }
                "log1p" => {
                    let mut a = self.args("log1p", 1)?;
                    Ok(Expr::Log1p(Box::new(a.pop().unwrap())))
                }
                "is_missing" => {
                    self.expect_op("(")?;
                    let col = match self.bump() {
                        Tok::Ident(c) if !KEYWORDS.contains(&c.as_str()) => c,
                        _ => return Err(self.err("is_missing takes a column name")),
                    };
                    self.expect_op(")")?;
                    Ok(Expr::IsMissing(col))
                }
                kw if KEYWORDS.contains(&kw) => Err(self.err(format!("unexpected keyword `{kw}`"))),
                _ => {
                    if matches!(self.peek(), Tok::Op("(")) {
                        return Err(self.err(format!("unknown function {id:?}")));
                    }
                    Ok(Expr::Col(id))
                }
            },
            Tok::Eof => Err(self.err("unexpected end of expression")),
            t => Err(self.err(format!("unexpected token {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = Parser::parse("a + b * 2 > 3 and not c == 'x' or d").unwrap();
        let Expr::Or(lhs, _) = e else { panic!() };
        let Expr::And(cmp, not) = *lhs else { panic!() };
        assert!(matches!(*cmp, Expr::Cmp(CmpOp::Gt, _, _)));
        assert!(matches!(*not, Expr::Not(_)));
    }

    #[test]
    fn literals_and_sets() {
        let e = Parser::parse("X in ['a', \"b\"]").unwrap();
        assert_eq!(
            e,
            Expr::In(
                Box::new(Expr::Col("X".into())),
                vec![Literal::Str("a".into()), Literal::Str("b".into())]
            )
        );
        let e = Parser::parse("X in [1, -2.5, 3e2]").unwrap();
        let Expr::In(_, items) = e else { panic!() };
        assert_eq!(items, vec![Literal::Num(1.0), Literal::Num(-2.5), Literal::Num(300.0)]);
    }

    #[test]
    fn errors() {
        assert!(Parser::parse("a / b").is_err());
        assert!(Parser::parse("if a then b").is_err());
        assert!(Parser::parse("foo(1)").is_err());
        assert!(Parser::parse("'abc").is_err());
        assert!(Parser::parse("a +").is_err());
        assert!(Parser::parse("a b").is_err());
        assert!(Parser::parse("safe_div(a)").is_err());
    }
}
