use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    All,
    Input,
    Generated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attr {
    Width,
    Opacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Attr(Attr),
    Length,
    Curvature,
    InputWidth,
    Neg(Box<Expr>),
    Bin(Box<Expr>, BinOp, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Clamp(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoolExpr {
    Cmp(Expr, CmpOp, Expr),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Delete,
    Set(Attr, Expr),
    Translate(f64, f64),
    /// Moves interior control points toward the chord by this fraction.
    Smooth(f64),
    /// Deletes strokes shorter than this many pixels.
    Simplify(f64),
    Split(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub selector: Selector,
    pub predicate: Option<BoolExpr>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjustmentProgram {
    pub statements: Vec<Statement>,
}

impl AdjustmentProgram {
    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Selector::All => "all",
            Selector::Input => "input",
            Selector::Generated => "generated",
        })
    }
}

impl fmt::Display for Attr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Attr::Width => "width",
            Attr::Opacity => "opacity",
        })
    }
}

/// Shortest decimal that parses back to the same value.
fn num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v == 0.0 {
        f.write_str("0")
    } else {
        write!(f, "{v}")
    }
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(_, op, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 => 3,
            _ => 4,
        }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, min_precedence: u8) -> fmt::Result {
        if self.precedence() < min_precedence {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => num(f, *v),
            Expr::Attr(a) => write!(f, "{a}"),
            Expr::Length => f.write_str("length"),
            Expr::Curvature => f.write_str("curvature"),
            Expr::InputWidth => f.write_str("input_width"),
            Expr::Neg(e) => {
                f.write_str("-")?;
                match **e {
                    Expr::Num(_) => write!(f, "({e})"),
                    _ => e.write_operand(f, 4),
                }
            }
            Expr::Bin(l, op, r) => {
                let p = op.precedence();
                l.write_operand(f, p)?;
                write!(f, " {} ", op.symbol())?;
                // left-associative: an equal-precedence right operand needs parentheses
                r.write_operand(f, p + 1)
            }
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Clamp(e, lo, hi) => write!(f, "clamp({e}, {lo}, {hi})"),
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoolExpr::Cmp(l, op, r) => write!(f, "{l} {} {r}", op.symbol()),
            BoolExpr::And(l, r) => {
                let side = |f: &mut fmt::Formatter<'_>, e: &BoolExpr, right: bool| match e {
                    BoolExpr::Or(..) => write!(f, "({e})"),
                    BoolExpr::And(..) if right => write!(f, "({e})"),
                    _ => write!(f, "{e}"),
                };
                side(f, l, false)?;
                f.write_str(" and ")?;
                side(f, r, true)
            }
            BoolExpr::Or(l, r) => {
                write!(f, "{l} or ")?;
                match **r {
                    BoolExpr::Or(..) => write!(f, "({r})"),
                    _ => write!(f, "{r}"),
                }
            }
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Delete => f.write_str("delete"),
            Action::Set(a, e) => write!(f, "set {a} = {e}"),
            Action::Translate(dx, dy) => {
                f.write_str("translate(")?;
                num(f, *dx)?;
                f.write_str(", ")?;
                num(f, *dy)?;
                f.write_str(")")
            }
            Action::Smooth(v) => {
                f.write_str("smooth(")?;
                num(f, *v)?;
                f.write_str(")")
            }
            Action::Simplify(v) => {
                f.write_str("simplify(")?;
                num(f, *v)?;
                f.write_str(")")
            }
            Action::Split(n) => write!(f, "split({n})"),
        }
    }
}

impl fmt::Display for Statement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "select {}", self.selector)?;
        if let Some(p) = &self.predicate {
            write!(f, " where {p}")?;
        }
        write!(f, " => {};", self.action)
    }
}

/// Canonical text: one statement per line.
impl fmt::Display for AdjustmentProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.statements {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}
