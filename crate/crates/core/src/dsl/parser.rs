use super::ast::*;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    /// What was found at the error position.
    pub found: String,
    pub expected: Vec<String>,
    pub message: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: ", self.line, self.column)?;
        if let Some(m) = &self.message {
            return write!(f, "{m}");
        }
        match self.expected.as_slice() {
            [] => write!(f, "unexpected {}", self.found),
            [one] => write!(f, "expected {one}, found {}", self.found),
            many => write!(f, "expected one of {}, found {}", many.join(", "), self.found),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: [&str; 15] = ["=>", "<=", ">=", "==", ";", "(", ")", ",", "+", "-", "*", "/", "<", ">", "="];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
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
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start_col = col;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
                column: start_col,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let v: f64 = s.parse().map_err(|_| ParseError {
                line,
                column: start_col,
                found: format!("`{s}`"),
                expected: vec!["number".into()],
                message: Some(format!("malformed number `{s}`")),
            })?;
            tokens.push(Token {
                tok: Tok::Num(v),
                line,
                column: start_col,
            });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                tokens.push(Token {
                    tok: Tok::Sym(s),
                    line,
                    column: start_col,
                });
            }
            None => {
                return Err(ParseError {
                    line,
                    column: start_col,
                    found: format!("`{c}`"),
                    expected: Vec::new(),
                    message: Some(format!("unexpected character `{c}`")),
                })
            }
        }
    }
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

const EXPR_START: [&str; 11] = [
    "number", "`width`", "`opacity`", "`length`", "`curvature`", "`input_width`", "`min`", "`max`", "`clamp`", "`(`", "`-`",
];
const ACTIONS: [&str; 6] = ["`delete`", "`set`", "`translate`", "`smooth`", "`simplify`", "`split`"];

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            column: t.column,
            found: t.tok.describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            message: None,
        }
    }

    fn invalid(&self, at: &Token, message: String) -> ParseError {
        ParseError {
            line: at.line,
            column: at.column,
            found: at.tok.describe(),
            expected: Vec::new(),
            message: Some(message),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(x) if x == w)
    }

    fn expect_sym(&mut self, s: &'static str) -> Result<(), ParseError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{s}`")]))
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.is_word(w) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[&format!("`{w}`")]))
        }
    }

    fn program(&mut self) -> Result<AdjustmentProgram, ParseError> {
        let mut statements = Vec::new();
        while self.peek().tok != Tok::Eof {
            statements.push(self.statement()?);
        }
        Ok(AdjustmentProgram { statements })
    }

    fn statement(&mut self) -> Result<Statement, ParseError> {
        self.expect_word("select")?;
        let selector = match &self.peek().tok {
            Tok::Ident(w) if w == "generated" => Selector::Generated,
            Tok::Ident(w) if w == "input" => Selector::Input,
            Tok::Ident(w) if w == "all" => Selector::All,
            _ => return Err(self.error(&["`generated`", "`input`", "`all`"])),
        };
        self.bump();
        let predicate = if self.is_word("where") {
            self.bump();
            Some(self.bool_or()?)
        } else if self.is_sym("=>") {
            None
        } else {
            return Err(self.error(&["`where`", "`=>`"]));
        };
        if !self.is_sym("=>") {
            let mut expected = vec!["`=>`", "`and`", "`or`"];
            expected.extend(["`+`", "`-`", "`*`", "`/`"]);
            return Err(self.error(&expected));
        }
        self.bump();
        let action = self.action()?;
        self.expect_sym(";")?;
        Ok(Statement {
            selector,
            predicate,
            action,
        })
    }

    fn action(&mut self) -> Result<Action, ParseError> {
        let word = match &self.peek().tok {
            Tok::Ident(w) => w.clone(),
            _ => return Err(self.error(&ACTIONS)),
        };
        match word.as_str() {
            "delete" => {
                self.bump();
                Ok(Action::Delete)
            }
            "set" => {
                self.bump();
                let attr = self.attr().ok_or_else(|| self.error(&["`width`", "`opacity`"]))?;
                self.bump();
                self.expect_sym("=")?;
                Ok(Action::Set(attr, self.expr()?))
            }
            "translate" => {
                self.bump();
                self.expect_sym("(")?;
                let dx = self.number()?;
                self.expect_sym(",")?;
                let dy = self.number()?;
                self.expect_sym(")")?;
                Ok(Action::Translate(dx, dy))
            }
            "smooth" | "simplify" | "split" => {
                self.bump();
                self.expect_sym("(")?;
                let arg = self.peek().clone();
                let v = self.number()?;
                self.expect_sym(")")?;
                match word.as_str() {
                    "smooth" if (0.0..=1.0).contains(&v) => Ok(Action::Smooth(v)),
                    "smooth" => Err(self.invalid(&arg, format!("smooth factor must lie in [0, 1], got {v}"))),
                    "simplify" if v >= 0.0 => Ok(Action::Simplify(v)),
                    "simplify" => Err(self.invalid(&arg, format!("simplify tolerance must be non-negative, got {v}"))),
                    _ if v.fract() == 0.0 && (2.0..=u32::MAX as f64).contains(&v) => Ok(Action::Split(v as u32)),
                    _ => Err(self.invalid(&arg, format!("split count must be an integer >= 2, got {v}"))),
                }
            }
            _ => Err(self.error(&ACTIONS)),
        }
    }

    fn attr(&self) -> Option<Attr> {
        match &self.peek().tok {
            Tok::Ident(w) if w == "width" => Some(Attr::Width),
            Tok::Ident(w) if w == "opacity" => Some(Attr::Opacity),
            _ => None,
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let negative = self.is_sym("-");
        if negative {
            self.bump();
        }
        match self.peek().tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if negative { -v } else { v })
            }
            _ if negative => Err(self.error(&["number"])),
            _ => Err(self.error(&["number", "`-`"])),
        }
    }

    fn bool_or(&mut self) -> Result<BoolExpr, ParseError> {
        let mut left = self.bool_and()?;
        while self.is_word("or") {
            self.bump();
            let right = self.bool_and()?;
            left = BoolExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn bool_and(&mut self) -> Result<BoolExpr, ParseError> {
        let mut left = self.bool_atom()?;
        while self.is_word("and") {
            self.bump();
            let right = self.bool_atom()?;
            left = BoolExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn bool_atom(&mut self) -> Result<BoolExpr, ParseError> {
        if self.is_sym("(") {
            // either a parenthesized boolean or an arithmetic operand
            let save = self.pos;
            self.bump();
            if let Ok(inner) = self.bool_or() {
                if self.is_sym(")") {
                    self.bump();
                    if self.cmp_op().is_none() && !self.at_arith_op() {
                        return Ok(inner);
                    }
                }
            }
            self.pos = save;
        }
        let left = self.expr()?;
        let Some(op) = self.cmp_op() else {
            let mut expected = vec!["`<`", "`<=`", "`>`", "`>=`", "`==`"];
            expected.extend(["`+`", "`-`", "`*`", "`/`"]);
            return Err(self.error(&expected));
        };
        self.bump();
        let right = self.expr()?;
        Ok(BoolExpr::Cmp(left, op, right))
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        match self.peek().tok {
            Tok::Sym("<") => Some(CmpOp::Lt),
            Tok::Sym("<=") => Some(CmpOp::Le),
            Tok::Sym(">") => Some(CmpOp::Gt),
            Tok::Sym(">=") => Some(CmpOp::Ge),
            Tok::Sym("==") => Some(CmpOp::Eq),
            _ => None,
        }
    }

    fn at_arith_op(&self) -> bool {
        matches!(self.peek().tok, Tok::Sym("+" | "-" | "*" | "/"))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.term()?;
            left = Expr::Bin(Box::new(left), op, Box::new(right));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                _ => return Ok(left),
            };
            self.bump();
            let right = self.unary()?;
            left = Expr::Bin(Box::new(left), op, Box::new(right));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_sym("-") {
            self.bump();
            // a negated literal stays a literal so printing round-trips
            if let Tok::Num(v) = self.peek().tok {
                self.bump();
                return Ok(Expr::Num(-v));
            }
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn call_args(&mut self, n: usize) -> Result<Vec<Expr>, ParseError> {
        self.expect_sym("(")?;
        let mut args = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect_sym(",")?;
            }
            args.push(self.expr()?);
        }
        self.expect_sym(")")?;
        Ok(args)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(w) => {
                let simple = match w.as_str() {
                    "width" => Some(Expr::Attr(Attr::Width)),
                    "opacity" => Some(Expr::Attr(Attr::Opacity)),
                    "length" => Some(Expr::Length),
                    "curvature" => Some(Expr::Curvature),
                    "input_width" => Some(Expr::InputWidth),
                    _ => None,
                };
                if let Some(e) = simple {
                    self.bump();
                    return Ok(e);
                }
                match w.as_str() {
                    "min" | "max" => {
                        self.bump();
                        let mut a = self.call_args(2)?.into_iter();
                        let (x, y) = (Box::new(a.next().unwrap()), Box::new(a.next().unwrap()));
                        Ok(if w == "min" { Expr::Min(x, y) } else { Expr::Max(x, y) })
                    }
                    "clamp" => {
                        self.bump();
                        let mut a = self.call_args(3)?.into_iter().map(Box::new);
                        Ok(Expr::Clamp(a.next().unwrap(), a.next().unwrap(), a.next().unwrap()))
                    }
                    _ => Err(self.error(&EXPR_START)),
                }
            }
            _ => Err(self.error(&EXPR_START)),
        }
    }
}

pub fn parse_program(text: &str) -> Result<AdjustmentProgram, ParseError> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0 }.program()
}
