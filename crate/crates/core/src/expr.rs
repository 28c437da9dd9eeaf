//! Scalar expression trees with exact forward-mode differentiation.
//!
//! Expressions are built over state variables `x1..xn`, the time variable
//! `t`, and a small set of operations. Evaluation returns the value together
//! with the full gradient in `x` and the partial in `t`, propagated by the
//! chain rule node by node. The Euclidean norm is smoothed as
//! `sqrt(Σeᵢ² + δ²)` so its gradient exists at the center point.

use std::fmt;
use thiserror::Error;

/// Default smoothing constant for [`Expr::Norm2`].
pub const DEFAULT_DELTA: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// State variable, 1-based index as written (`x1` is index 1).
    Var(usize),
    Time,
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sqrt(Box<Expr>),
    /// Power by a rational constant. Not part of the input grammar; used
    /// programmatically (tests, derived expressions).
    Pow(Box<Expr>, f64),
    /// Smoothed Euclidean norm of the argument vector.
    Norm2(Vec<Expr>),
    /// `1 / (1 + exp(-b (t + c)))` — depends on time only.
    Logistic { rate: f64, shift: f64 },
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("variable x{index} out of range (state dimension {dim})")]
    VarOutOfRange { index: usize, dim: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative argument ({arg})")]
    SqrtNegative { arg: f64 },
}

/// Value with exact first-order sensitivities: gradient in x and ∂/∂t.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub d_dt: f64,
}

impl EvalResult {
    fn constant(v: f64, n: usize) -> Self {
        EvalResult { value: v, grad_x: vec![0.0; n], d_dt: 0.0 }
    }
}

impl Expr {
    /// Largest variable index mentioned anywhere in the tree (0 if none).
    pub fn max_var_index(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Time | Expr::Logistic { .. } => 0,
            Expr::Var(i) => *i,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_var_index().max(b.max_var_index())
            }
            Expr::Neg(a) | Expr::Sqrt(a) | Expr::Pow(a, _) => a.max_var_index(),
            Expr::Norm2(es) => es.iter().map(|e| e.max_var_index()).max().unwrap_or(0),
        }
    }

    /// Whether the tree mentions the time variable (directly or via logistic).
    pub fn depends_on_time(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Time | Expr::Logistic { .. } => true,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_time() || b.depends_on_time()
            }
            Expr::Neg(a) | Expr::Sqrt(a) | Expr::Pow(a, _) => a.depends_on_time(),
            Expr::Norm2(es) => es.iter().any(|e| e.depends_on_time()),
        }
    }

    /// Evaluate with the default norm smoothing.
    pub fn eval_grad(&self, x: &[f64], t: f64) -> Result<EvalResult, ExprError> {
        self.eval_grad_delta(x, t, DEFAULT_DELTA)
    }

    /// Evaluate value, gradient and time derivative with smoothing `delta`.
    pub fn eval_grad_delta(&self, x: &[f64], t: f64, delta: f64) -> Result<EvalResult, ExprError> {
        let n = x.len();
        match self {
            Expr::Const(c) => Ok(EvalResult::constant(*c, n)),
            Expr::Var(i) => {
                if *i == 0 || *i > n {
                    return Err(ExprError::VarOutOfRange { index: *i, dim: n });
                }
                let mut r = EvalResult::constant(x[*i - 1], n);
                r.grad_x[*i - 1] = 1.0;
                Ok(r)
            }
            Expr::Time => {
                let mut r = EvalResult::constant(t, n);
                r.d_dt = 1.0;
                Ok(r)
            }
            Expr::Add(a, b) => {
                let (a, b) = (a.eval_grad_delta(x, t, delta)?, b.eval_grad_delta(x, t, delta)?);
                Ok(combine(a, b, |va, vb| va + vb, 1.0, 1.0))
            }
            Expr::Sub(a, b) => {
                let (a, b) = (a.eval_grad_delta(x, t, delta)?, b.eval_grad_delta(x, t, delta)?);
                Ok(combine(a, b, |va, vb| va - vb, 1.0, -1.0))
            }
            Expr::Mul(a, b) => {
                let (a, b) = (a.eval_grad_delta(x, t, delta)?, b.eval_grad_delta(x, t, delta)?);
                let (da, db) = (b.value, a.value);
                Ok(combine(a, b, |va, vb| va * vb, da, db))
            }
            Expr::Div(a, b) => {
                let (a, b) = (a.eval_grad_delta(x, t, delta)?, b.eval_grad_delta(x, t, delta)?);
                if b.value == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                let (da, db) = (1.0 / b.value, -a.value / (b.value * b.value));
                Ok(combine(a, b, |va, vb| va / vb, da, db))
            }
            Expr::Neg(a) => {
                let a = a.eval_grad_delta(x, t, delta)?;
                Ok(unary(a, |v| -v, -1.0))
            }
            Expr::Sqrt(a) => {
                let a = a.eval_grad_delta(x, t, delta)?;
                if a.value < 0.0 {
                    return Err(ExprError::SqrtNegative { arg: a.value });
                }
                let v = a.value.sqrt();
                let has_grad = a.grad_x.iter().any(|g| *g != 0.0) || a.d_dt != 0.0;
                if v == 0.0 && has_grad {
                    return Err(ExprError::DivisionByZero);
                }
                let d = if has_grad { 0.5 / v } else { 0.0 };
                Ok(unary(a, |_| v, d))
            }
            Expr::Pow(a, p) => {
                let a = a.eval_grad_delta(x, t, delta)?;
                let v = a.value.powf(*p);
                if !v.is_finite() {
                    return Err(ExprError::SqrtNegative { arg: a.value });
                }
                let d = if a.value == 0.0 { 0.0 } else { p * v / a.value };
                Ok(unary(a, |_| v, d))
            }
            Expr::Norm2(es) => {
                let parts: Vec<EvalResult> = es
                    .iter()
                    .map(|e| e.eval_grad_delta(x, t, delta))
                    .collect::<Result<_, _>>()?;
                let sum_sq: f64 = parts.iter().map(|p| p.value * p.value).sum();
                let v = (sum_sq + delta * delta).sqrt();
                let mut grad_x = vec![0.0; n];
                let mut d_dt = 0.0;
                for p in &parts {
                    let w = p.value / v;
                    for (g, pg) in grad_x.iter_mut().zip(&p.grad_x) {
                        *g += w * pg;
                    }
                    d_dt += w * p.d_dt;
                }
                Ok(EvalResult { value: v, grad_x, d_dt })
            }
            Expr::Logistic { rate, shift } => {
                let s = 1.0 / (1.0 + (-rate * (t + shift)).exp());
                let mut r = EvalResult::constant(s, n);
                r.d_dt = rate * s * (1.0 - s);
                Ok(r)
            }
        }
    }
}

fn unary(a: EvalResult, f: impl Fn(f64) -> f64, d: f64) -> EvalResult {
    EvalResult {
        value: f(a.value),
        grad_x: a.grad_x.iter().map(|g| d * g).collect(),
        d_dt: d * a.d_dt,
    }
}

fn combine(a: EvalResult, b: EvalResult, f: impl Fn(f64, f64) -> f64, da: f64, db: f64) -> EvalResult {
    EvalResult {
        value: f(a.value, b.value),
        grad_x: a
            .grad_x
            .iter()
            .zip(&b.grad_x)
            .map(|(ga, gb)| da * ga + db * gb)
            .collect(),
        d_dt: da * a.d_dt + db * b.d_dt,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", c),
            Expr::Var(i) => write!(f, "x{}", i),
            Expr::Time => write!(f, "t"),
            Expr::Add(a, b) => write!(f, "({} + {})", a, b),
            Expr::Sub(a, b) => write!(f, "({} - {})", a, b),
            Expr::Mul(a, b) => write!(f, "({} * {})", a, b),
            Expr::Div(a, b) => write!(f, "({} / {})", a, b),
            Expr::Neg(a) => write!(f, "(-{})", a),
            Expr::Sqrt(a) => write!(f, "sqrt({})", a),
            Expr::Pow(a, p) => write!(f, "({})^{}", a, p),
            Expr::Norm2(es) => {
                write!(f, "norm2(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", e)?;
                }
                write!(f, ")")
            }
            Expr::Logistic { rate, shift } => write!(f, "logistic({}, {})", rate, shift),
        }
    }
}

/// Parse an expression over `x1..x<dim>` and `t`.
///
/// Grammar: `expr := term (('+'|'-') term)*`, `term := factor (('*'|'/') factor)*`,
/// `factor := NUMBER | 'x'INT | 't' | '(' expr ')' | '-' factor | 'sqrt(' expr ')'
/// | 'norm2(' expr (',' expr)* ')' | 'logistic(' NUMBER ',' NUMBER ')'`.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, ExprError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, dim };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> ExprError {
        ExprError::Syntax { offset: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.err("expected expression, found end of input")),
            Some(b'-') => {
                self.pos += 1;
                self.skip_ws();
                // fold a negated literal number into a constant so printed
                // negative constants re-parse to themselves
                if self.peek().is_some_and(|c| c.is_ascii_digit() || c == b'.') {
                    let v = self.number()?;
                    return Ok(Expr::Const(-v));
                }
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(b'(') => {
                self.pos += 1;
                self.skip_ws();
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let v = self.number()?;
                Ok(Expr::Const(v))
            }
            Some(_) => {
                let start = self.pos;
                let word = self.ident();
                match word.as_str() {
                    "t" => {
                        self.skip_ws();
                        Ok(Expr::Time)
                    }
                    "sqrt" => {
                        self.skip_ws();
                        self.expect(b'(')?;
                        let e = self.expr()?;
                        self.expect(b')')?;
                        Ok(Expr::Sqrt(Box::new(e)))
                    }
                    "norm2" => {
                        self.skip_ws();
                        self.expect(b'(')?;
                        let mut args = vec![self.expr()?];
                        while self.eat(b',') {
                            args.push(self.expr()?);
                        }
                        self.expect(b')')?;
                        Ok(Expr::Norm2(args))
                    }
                    "logistic" => {
                        self.skip_ws();
                        self.expect(b'(')?;
                        let rate = self.signed_number()?;
                        self.expect(b',')?;
                        let shift = self.signed_number()?;
                        self.expect(b')')?;
                        Ok(Expr::Logistic { rate, shift })
                    }
                    w if w.starts_with('x') && w.len() > 1 && w[1..].bytes().all(|b| b.is_ascii_digit()) => {
                        let idx: usize = w[1..].parse().map_err(|_| ExprError::Syntax {
                            offset: start,
                            msg: "bad variable index".into(),
                        })?;
                        if idx == 0 || idx > self.dim {
                            return Err(ExprError::VarOutOfRange { index: idx, dim: self.dim });
                        }
                        self.skip_ws();
                        Ok(Expr::Var(idx))
                    }
                    _ => {
                        self.pos = start;
                        Err(self.err("expected expression"))
                    }
                }
            }
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn signed_number(&mut self) -> Result<f64, ExprError> {
        let neg = self.eat(b'-');
        let v = self.number()?;
        Ok(if neg { -v } else { v })
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        if self.pos == start {
            return Err(self.err("expected number"));
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            msg: format!("bad number '{}'", s),
        })?;
        self.skip_ws();
        Ok(v)
    }
}
