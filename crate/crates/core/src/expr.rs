//! Drift expressions: a small language for declaring drift functions as text.
//!
//! Expressions are scalar-valued over state variables `x` (or `x1..xd` for
//! d > 1) and named parameters (e.g. `beta`), with `+ - * / ^`, unary minus
//! and the functions `sin`, `cos`, `exp`, `tanh`. Precedence, tightest first:
//! `^`, unary minus, `* /`, `+ -`; `^` is right-associative and its exponent
//! must be an (optionally signed) numeric literal.
//!
//! A [`DriftField`] bundles one expression per state dimension with bound
//! parameter values and evaluates as a vector field. Fields are immutable
//! after construction and safe to evaluate from many threads.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Errors from parsing or evaluating drift expressions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes exactly one argument")]
    Arity { name: String },
    #[error("division by zero in `{subexpr}`")]
    DivisionByZero { subexpr: String },
    #[error("fractional power of negative base in `{subexpr}`")]
    NegativeBasePower { subexpr: String },
    #[error("parameter `{0}` is not bound to a value")]
    UnboundParameter(String),
    #[error("parameter name `{0}` collides with a state variable or function")]
    ReservedParameterName(String),
    #[error("drift field has {found} components but dimension {dim}")]
    ComponentCount { found: usize, dim: usize },
    #[error("point has dimension {found}, drift field expects {dim}")]
    PointDimension { found: usize, dim: usize },
    #[error("unknown catalog drift `{0}`")]
    UnknownCatalogEntry(String),
    #[error("dimension must be at least 1")]
    ZeroDimension,
}

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }
}

/// Binary operators other than `^` (whose exponent is a folded literal).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Node {
    Num(f64),
    /// State variable by zero-based index.
    Var(usize),
    /// Parameter by slot index into the declared parameter list.
    Param(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    /// Base raised to a literal exponent (chains folded right-associatively).
    Pow(Box<Node>, f64),
    Call(Func, Box<Node>),
}

/// A parsed scalar drift expression for one component of a vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftExpr {
    root: Node,
    dim: usize,
    param_names: Vec<String>,
}

/// Parse `source` as a scalar expression over `dim` state variables and the
/// declared parameter names.
pub fn parse(source: &str, dim: usize, param_names: &[&str]) -> Result<DriftExpr, ExprError> {
    if dim == 0 {
        return Err(ExprError::ZeroDimension);
    }
    for name in param_names {
        let reserved = Func::from_name(name).is_some()
            || *name == "x"
            || (name.starts_with('x') && name[1..].parse::<usize>().is_ok());
        if reserved {
            return Err(ExprError::ReservedParameterName(name.to_string()));
        }
    }
    let mut parser = Parser {
        src: source.as_bytes(),
        pos: 0,
        dim,
        param_names,
    };
    parser.skip_ws();
    if parser.pos == parser.src.len() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let root = parser.expr(0)?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(ExprError::Syntax {
            offset: parser.pos,
            message: format!("unexpected `{}`", parser.src[parser.pos] as char),
        });
    }
    Ok(DriftExpr {
        root,
        dim,
        param_names: param_names.iter().map(|s| s.to_string()).collect(),
    })
}

impl DriftExpr {
    /// State dimension this expression was declared over.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared parameter names, in declaration order.
    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    /// Evaluate at state `x` with parameter slot values `params`
    /// (aligned with [`DriftExpr::param_names`]).
    pub fn eval(&self, x: &[f64], params: &[f64]) -> Result<f64, ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::PointDimension {
                found: x.len(),
                dim: self.dim,
            });
        }
        debug_assert_eq!(params.len(), self.param_names.len());
        self.root.eval(x, params)
    }

    /// Render the expression as source text that reparses to an equivalent tree.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        self.root.pretty(&mut out, 0, &self.param_names);
        out
    }
}

impl Node {
    fn eval(&self, x: &[f64], params: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Node::Num(v) => *v,
            Node::Var(i) => x[*i],
            Node::Param(i) => params[*i],
            Node::Neg(e) => -e.eval(x, params)?,
            Node::Bin(op, a, b) => {
                let va = a.eval(x, params)?;
                let vb = b.eval(x, params)?;
                match op {
                    BinOp::Add => va + vb,
                    BinOp::Sub => va - vb,
                    BinOp::Mul => va * vb,
                    BinOp::Div => {
                        if vb == 0.0 {
                            return Err(ExprError::DivisionByZero {
                                subexpr: self.pretty_fresh(),
                            });
                        }
                        va / vb
                    }
                }
            }
            Node::Pow(base, e) => {
                let vb = base.eval(x, params)?;
                if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                    let ei = *e as i32;
                    if vb == 0.0 && ei < 0 {
                        return Err(ExprError::DivisionByZero {
                            subexpr: self.pretty_fresh(),
                        });
                    }
                    vb.powi(ei)
                } else {
                    if vb < 0.0 {
                        return Err(ExprError::NegativeBasePower {
                            subexpr: self.pretty_fresh(),
                        });
                    }
                    vb.powf(*e)
                }
            }
            Node::Call(f, e) => f.apply(e.eval(x, params)?),
        })
    }

    /// Render for error messages; parameter slots print as `p0`, `p1`, ...
    /// when names are not at hand.
    fn pretty_fresh(&self) -> String {
        let mut out = String::new();
        self.pretty(&mut out, 0, &[] as &[&str]);
        out
    }

    fn precedence(&self) -> u8 {
        match self {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            Node::Pow(..) => 4,
            _ => 5,
        }
    }

    fn pretty(&self, out: &mut String, parent: u8, params: &[impl AsRef<str>]) {
        let prec = self.precedence();
        let parens = prec < parent;
        if parens {
            out.push('(');
        }
        match self {
            Node::Num(v) => {
                if *v < 0.0 || !v.is_finite() {
                    // negative literals only arise from folded exponents
                    out.push_str(&format!("({v})"));
                } else {
                    out.push_str(&format!("{v}"));
                }
            }
            Node::Var(i) => out.push_str(&format!("x{}", i + 1)),
            Node::Param(i) => match params.get(*i) {
                Some(name) => out.push_str(name.as_ref()),
                None => out.push_str(&format!("p{i}")),
            },
            Node::Neg(e) => {
                out.push('-');
                e.pretty(out, prec + 1, params);
            }
            Node::Bin(op, a, b) => {
                a.pretty(out, prec, params);
                out.push_str(match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                });
                // right operand of - and / must bind strictly tighter
                let rp = match op {
                    BinOp::Add | BinOp::Mul => prec,
                    BinOp::Sub | BinOp::Div => prec + 1,
                };
                b.pretty(out, rp, params);
            }
            Node::Pow(base, e) => {
                base.pretty(out, prec + 1, params);
                out.push('^');
                if *e < 0.0 {
                    out.push_str(&format!("-{}", -e));
                } else {
                    out.push_str(&format!("{e}"));
                }
            }
            Node::Call(f, e) => {
                out.push_str(f.name());
                out.push('(');
                e.pretty(out, 0, params);
                out.push(')');
            }
        }
        if parens {
            out.push(')');
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
    param_names: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            offset,
            message: message.into(),
        })
    }

    /// Pratt expression parser. Binding powers: `+ -` = 1, `* /` = 3,
    /// unary minus = 5, `^` = 7.
    fn expr(&mut self, min_bp: u8) -> Result<Node, ExprError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                Some(b'^') => {
                    if 7 < min_bp {
                        break;
                    }
                    self.pos += 1;
                    let e = self.exponent()?;
                    lhs = Node::Pow(Box::new(lhs), e);
                    continue;
                }
                _ => break,
            };
            let (lbp, rbp) = match op {
                BinOp::Add | BinOp::Sub => (1, 2),
                BinOp::Mul | BinOp::Div => (3, 4),
            };
            if lbp < min_bp {
                break;
            }
            self.pos += 1;
            let rhs = self.expr(rbp)?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    /// Exponent of `^`: an optionally signed numeric literal, with chained
    /// `^` folded right-associatively at parse time (`x^2^3` is `x^8`).
    fn exponent(&mut self) -> Result<f64, ExprError> {
        let neg = if self.peek() == Some(b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {}
            _ => return self.syntax(self.pos, "exponent must be a numeric literal"),
        }
        let mut v = self.number()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let inner = self.exponent()?;
            if v < 0.0 && inner.fract() != 0.0 {
                return self.syntax(start, "fractional power of negative literal in exponent");
            }
            v = v.powf(inner);
        }
        Ok(if neg { -v } else { v })
    }

    fn prefix(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => self.syntax(self.pos, "unexpected end of input"),
            Some(b'-') => {
                self.pos += 1;
                // unary minus binds looser than ^ but tighter than * /
                let inner = self.expr(6)?;
                Ok(Node::Neg(Box::new(inner)))
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr(0)?;
                if self.peek() != Some(b')') {
                    return self.syntax(self.pos, "expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => Ok(Node::Num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => self.syntax(self.pos, format!("unexpected `{}`", c as char)),
        }
    }

    fn number(&mut self) -> Result<f64, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] | 0x20) == b'e' {
            let mark = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-')
            {
                self.pos += 1;
            }
            if self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                // the `e` starts an identifier, not an exponent suffix
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii span");
        text.parse::<f64>().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }

    fn identifier(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii span");
        if let Some(f) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return self.syntax(self.pos, format!("expected `(` after function `{name}`"));
            }
            self.pos += 1;
            let arg = self.expr(0)?;
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                Some(b',') => {
                    return Err(ExprError::Arity {
                        name: name.to_string(),
                    })
                }
                _ => return self.syntax(self.pos, "expected `)`"),
            }
        }
        if let Some(idx) = self.var_index(name) {
            return Ok(Node::Var(idx));
        }
        if let Some(slot) = self.param_names.iter().position(|p| *p == name) {
            return Ok(Node::Param(slot));
        }
        Err(ExprError::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })
    }

    fn var_index(&self, name: &str) -> Option<usize> {
        if name == "x" && self.dim == 1 {
            return Some(0);
        }
        let rest = name.strip_prefix('x')?;
        let idx: usize = rest.parse().ok()?;
        (idx >= 1 && idx <= self.dim).then(|| idx - 1)
    }
}

/// An evaluable vector drift field: one expression per state dimension with
/// all parameters bound.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    components: Vec<DriftExpr>,
    params: BTreeMap<String, f64>,
    /// Parameter values in slot order, shared by all components.
    slots: Vec<f64>,
    dim: usize,
}

impl DriftField {
    /// Bundle components into a field, binding every declared parameter.
    ///
    /// All components must share the same dimension and parameter
    /// declaration (in practice they are parsed together).
    pub fn new(
        components: Vec<DriftExpr>,
        params: BTreeMap<String, f64>,
    ) -> Result<DriftField, ExprError> {
        let dim = components.first().map(|c| c.dim).unwrap_or(0);
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        if components.len() != dim {
            return Err(ExprError::ComponentCount {
                found: components.len(),
                dim,
            });
        }
        let names = components[0].param_names.clone();
        for c in &components {
            if c.dim != dim || c.param_names != names {
                return Err(ExprError::ComponentCount { found: c.dim, dim });
            }
        }
        let mut slots = Vec::with_capacity(names.len());
        for name in &names {
            match params.get(name) {
                Some(v) => slots.push(*v),
                None => return Err(ExprError::UnboundParameter(name.clone())),
            }
        }
        Ok(DriftField {
            components,
            params,
            slots,
            dim,
        })
    }

    /// Parse a scalar (d = 1) drift from source text with parameter bindings.
    pub fn parse_scalar(
        source: &str,
        params: &BTreeMap<String, f64>,
    ) -> Result<DriftField, ExprError> {
        let names: Vec<&str> = params.keys().map(|s| s.as_str()).collect();
        let expr = parse(source, 1, &names)?;
        DriftField::new(vec![expr], params.clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bound parameter values by name.
    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Component expressions.
    pub fn components(&self) -> &[DriftExpr] {
        &self.components
    }

    /// Source form of the field: the pretty-printed components.
    pub fn pretty(&self) -> Vec<String> {
        self.components.iter().map(|c| c.pretty()).collect()
    }

    /// A copy with one parameter rebound (used by sweeps).
    pub fn with_param(&self, name: &str, value: f64) -> Result<DriftField, ExprError> {
        if !self.params.contains_key(name) {
            return Err(ExprError::UnboundParameter(name.to_string()));
        }
        let mut params = self.params.clone();
        params.insert(name.to_string(), value);
        DriftField::new(self.components.clone(), params)
    }

    /// Evaluate into a caller-provided buffer of length `dim`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        if x.len() != self.dim || out.len() != self.dim {
            return Err(ExprError::PointDimension {
                found: x.len(),
                dim: self.dim,
            });
        }
        for (slot, comp) in out.iter_mut().zip(&self.components) {
            *slot = comp.root.eval(x, &self.slots)?;
        }
        Ok(())
    }

    /// Evaluate, allocating the output vector.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// Scalar evaluation convenience for d = 1 fields.
    pub fn eval1(&self, x: f64) -> Result<f64, ExprError> {
        if self.dim != 1 {
            return Err(ExprError::PointDimension {
                found: 1,
                dim: self.dim,
            });
        }
        self.components[0].root.eval(&[x], &self.slots)
    }
}

impl fmt::Display for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.pretty().join(", "))
    }
}

pub mod catalog {
    //! Built-in scalar drift families, constructed directly as syntax trees so
    //! estimator and oracle tests do not depend on the parser.

    use super::*;

    fn num(v: f64) -> Node {
        Node::Num(v)
    }
    fn var() -> Node {
        Node::Var(0)
    }
    fn param(slot: usize) -> Node {
        Node::Param(slot)
    }
    fn neg(a: Node) -> Node {
        Node::Neg(Box::new(a))
    }
    fn add(a: Node, b: Node) -> Node {
        Node::Bin(BinOp::Add, Box::new(a), Box::new(b))
    }
    fn sub(a: Node, b: Node) -> Node {
        Node::Bin(BinOp::Sub, Box::new(a), Box::new(b))
    }
    fn mul(a: Node, b: Node) -> Node {
        Node::Bin(BinOp::Mul, Box::new(a), Box::new(b))
    }
    fn div(a: Node, b: Node) -> Node {
        Node::Bin(BinOp::Div, Box::new(a), Box::new(b))
    }
    fn pow(a: Node, e: f64) -> Node {
        Node::Pow(Box::new(a), e)
    }
    fn sin(a: Node) -> Node {
        Node::Call(Func::Sin, Box::new(a))
    }

    /// One catalog family: canonical source text and parameter declaration.
    pub struct CatalogEntry {
        pub name: &'static str,
        pub source: &'static str,
        pub param_names: &'static [&'static str],
    }

    pub const ENTRIES: &[CatalogEntry] = &[
        CatalogEntry {
            name: "double_well",
            source: "4*x - 4*x^3",
            param_names: &[],
        },
        CatalogEntry {
            name: "double_well_perturbed",
            source: "4*x - 4*x^3 - beta*(x^2 + 2*x + 1)",
            param_names: &["beta"],
        },
        CatalogEntry {
            name: "tfa_gene",
            source: "beta*(6*x^2/(x^2 + 10) - x + 0.4)",
            param_names: &["beta"],
        },
        CatalogEntry {
            name: "trig",
            source: "beta*(sin(x) - sin(x)^3)",
            param_names: &["beta"],
        },
        CatalogEntry {
            name: "ou",
            source: "-theta*x",
            param_names: &["theta"],
        },
        CatalogEntry {
            name: "constant_shift",
            source: "-x + c",
            param_names: &["c"],
        },
    ];

    fn build_tree(name: &str) -> Option<Node> {
        Some(match name {
            // 4x - 4x^3
            "double_well" => sub(mul(num(4.0), var()), mul(num(4.0), pow(var(), 3.0))),
            // 4x - 4x^3 - beta(x^2 + 2x + 1)
            "double_well_perturbed" => sub(
                sub(mul(num(4.0), var()), mul(num(4.0), pow(var(), 3.0))),
                mul(
                    param(0),
                    add(add(pow(var(), 2.0), mul(num(2.0), var())), num(1.0)),
                ),
            ),
            // beta(6x^2/(x^2 + 10) - x + 0.4)
            "tfa_gene" => mul(
                param(0),
                add(
                    sub(
                        div(
                            mul(num(6.0), pow(var(), 2.0)),
                            add(pow(var(), 2.0), num(10.0)),
                        ),
                        var(),
                    ),
                    num(0.4),
                ),
            ),
            // beta(sin x - sin^3 x)
            "trig" => mul(param(0), sub(sin(var()), pow(sin(var()), 3.0))),
            // -theta x
            "ou" => neg(mul(param(0), var())),
            // -x + c
            "constant_shift" => add(neg(var()), param(0)),
            _ => return None,
        })
    }

    /// Look up a catalog family and bind its parameters.
    pub fn drift(name: &str, params: &BTreeMap<String, f64>) -> Result<DriftField, ExprError> {
        let entry = ENTRIES
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| ExprError::UnknownCatalogEntry(name.to_string()))?;
        let root = build_tree(name).expect("entry has a tree");
        let expr = DriftExpr {
            root,
            dim: 1,
            param_names: entry.param_names.iter().map(|s| s.to_string()).collect(),
        };
        DriftField::new(vec![expr], params.clone())
    }

    /// Convenience for single-parameter families.
    pub fn drift1(name: &str, param: &str, value: f64) -> Result<DriftField, ExprError> {
        let mut params = BTreeMap::new();
        params.insert(param.to_string(), value);
        drift(name, &params)
    }

    /// Parameter-free families.
    pub fn drift0(name: &str) -> Result<DriftField, ExprError> {
        drift(name, &BTreeMap::new())
    }

    /// The zero drift (the known drift r = 0 in two of the experiment setups).
    pub fn zero(dim: usize) -> DriftField {
        let expr = DriftExpr {
            root: num(0.0),
            dim,
            param_names: Vec::new(),
        };
        DriftField::new(vec![expr; dim], BTreeMap::new()).expect("valid zero field")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn p1(src: &str) -> DriftExpr {
        parse(src, 1, &[]).unwrap()
    }

    fn ev(src: &str, x: f64) -> f64 {
        p1(src).eval(&[x], &[]).unwrap()
    }

    fn ev_err(src: &str, x: f64) -> ExprError {
        p1(src).eval(&[x], &[]).unwrap_err()
    }

    #[test]
    fn evaluates_double_well_at_one() {
        assert_eq!(ev("4*x - 4*x^3", 1.0), 0.0);
    }

    #[test]
    fn evaluates_tfa_at_zero() {
        let e = parse("beta*(6*x^2/(x^2+10) - x + 0.4)", 1, &["beta"]).unwrap();
        assert_abs_diff_eq!(e.eval(&[0.0], &[1.0]).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn rejects_unknown_identifier() {
        match parse("4*x - 4*y^3", 1, &[]) {
            Err(ExprError::UnknownIdentifier { name, .. }) => assert_eq!(name, "y"),
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn precedence_matches_grammar() {
        assert_eq!(ev("2+3*4", 0.0), 14.0);
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0); // right-associative
        assert_eq!(ev("6/3/2", 0.0), 1.0); // left-associative
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("2*x^-1", 2.0), 1.0);
        assert_eq!(ev("-x^2 + x", 3.0), -6.0);
    }

    #[test]
    fn whitespace_insensitive() {
        assert_eq!(ev("  4 *x-  4* x ^ 3 ", 2.0), ev("4*x-4*x^3", 2.0));
    }

    #[test]
    fn division_by_zero_reports_subexpression() {
        match ev_err("1/x", 0.0) {
            ExprError::DivisionByZero { subexpr } => assert_eq!(subexpr, "1/x1"),
            other => panic!("expected division by zero, got {other:?}"),
        }
    }

    #[test]
    fn negative_base_fractional_power_is_domain_error() {
        match ev_err("x^0.5", -1.0) {
            ExprError::NegativeBasePower { .. } => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn zero_to_negative_power_is_division_error() {
        match ev_err("x^-2", 0.0) {
            ExprError::DivisionByZero { .. } => {}
            other => panic!("expected division error, got {other:?}"),
        }
    }

    #[test]
    fn function_arity_is_checked() {
        match parse("sin(x, x)", 1, &[]) {
            Err(ExprError::Arity { name }) => assert_eq!(name, "sin"),
            other => panic!("expected arity error, got {other:?}"),
        }
        assert!(matches!(
            parse("sin()", 1, &[]),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            parse("sin + 1", 1, &[]),
            Err(ExprError::Syntax { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("4*x +", 1, &[]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
        match parse("4*)x", 1, &[]) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn multidimensional_variables_resolve() {
        let e = parse("x1 + 2*x2", 2, &[]).unwrap();
        assert_eq!(e.eval(&[1.0, 3.0], &[]).unwrap(), 7.0);
        assert!(matches!(
            parse("x", 2, &[]),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse("x3", 2, &[]),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn scientific_notation_parses() {
        assert_eq!(ev("1e-3 + 2.5e2", 0.0), 0.001 + 250.0);
        // `e` not followed by digits is an identifier boundary, not an exponent
        assert!(parse("2e", 1, &[]).is_err());
    }

    #[test]
    fn field_requires_bound_parameters() {
        let mut params = BTreeMap::new();
        params.insert("beta".to_string(), 2.0);
        let f = DriftField::parse_scalar("beta*x", &params).unwrap();
        assert_eq!(f.eval1(3.0).unwrap(), 6.0);
        let err = DriftField::parse_scalar("beta*x", &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, ExprError::UnknownIdentifier { .. }));
    }

    #[test]
    fn catalog_double_well_is_odd_at_zero() {
        let f = catalog::drift0("double_well").unwrap();
        assert_eq!(f.eval1(0.0).unwrap(), 0.0);
    }

    #[test]
    fn catalog_trig_vanishes_at_half_pi() {
        let f = catalog::drift1("trig", "beta", 2.0).unwrap();
        assert_abs_diff_eq!(
            f.eval1(std::f64::consts::FRAC_PI_2).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn catalog_matches_parsed_source() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for entry in catalog::ENTRIES {
            let mut params = BTreeMap::new();
            for p in entry.param_names {
                params.insert(p.to_string(), rng.gen_range(0.5..3.0));
            }
            let built = catalog::drift(entry.name, &params).unwrap();
            let names: Vec<&str> = entry.param_names.to_vec();
            let parsed =
                DriftField::new(vec![parse(entry.source, 1, &names).unwrap()], params).unwrap();
            for _ in 0..100 {
                let x = rng.gen_range(-3.0..3.0);
                let a = built.eval1(x).unwrap();
                let b = parsed.eval1(x).unwrap();
                assert!(
                    (a - b).abs() <= 1e-12,
                    "{}: {a} vs {b} at x={x}",
                    entry.name
                );
            }
        }
    }

    #[test]
    fn pretty_print_round_trips() {
        let sources = [
            "4*x - 4*x^3",
            "beta*(6*x^2/(x^2+10) - x + 0.4)",
            "-x + 0.4",
            "-(x + 1)^2",
            "2^3^2 * x",
            "sin(x) - sin(x)^3",
            "tanh(exp(-x^2))",
            "x^-2 + 1/(1 + x^2)",
            "1 - 2 - 3*x",
            "(1 - x)/(1 + x)/2",
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for src in sources {
            let e = parse(src, 1, &["beta"]).unwrap();
            let printed = e.pretty();
            let re = parse(&printed, 1, &["beta"]).unwrap();
            for _ in 0..100 {
                let x = rng.gen_range(-2.0..2.0);
                let beta = rng.gen_range(-2.0..2.0);
                let a = e.eval(&[x], &[beta]);
                let b = re.eval(&[x], &[beta]);
                match (a, b) {
                    (Ok(a), Ok(b)) => assert!(
                        (a - b).abs() <= 1e-12,
                        "{src} -> {printed}: {a} vs {b} at x={x}"
                    ),
                    (Err(_), Err(_)) => {}
                    other => panic!("{src} -> {printed}: divergent results {other:?}"),
                }
            }
        }
    }

    #[test]
    fn with_param_rebinds_for_sweeps() {
        let f = catalog::drift1("ou", "theta", 1.0).unwrap();
        let g = f.with_param("theta", 2.0).unwrap();
        assert_eq!(g.eval1(1.0).unwrap(), -2.0);
        assert_eq!(f.eval1(1.0).unwrap(), -1.0);
        assert!(f.with_param("nope", 1.0).is_err());
    }
}
