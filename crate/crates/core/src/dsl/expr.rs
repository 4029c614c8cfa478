//! Expression trees for metric coefficients.
//!
//! Nodes are reference counted, so cloning an [`Expr`] is cheap and
//! derivative trees share structure with their source.

use std::collections::HashMap;
use std::fmt;
use std::ops;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(Arc<str>),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Pow(Expr, Expr),
    Call(Func, Expr),
    /// `below` where `switch < 0`, otherwise `above`.
    Piecewise { switch: Expr, below: Expr, above: Expr },
}

#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || *self.0 == *other.0
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Self {
        Expr::num(c)
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub(crate) fn id(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    fn wrap(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn num(c: f64) -> Expr {
        Expr::wrap(Node::Const(c))
    }

    pub fn var(name: &str) -> Expr {
        Expr::wrap(Node::Var(Arc::from(name)))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    fn is(&self, v: f64) -> bool {
        self.as_const() == Some(v)
    }

    pub fn pow(&self, e: impl Into<Expr>) -> Expr {
        let e = e.into();
        match (self.as_const(), e.as_const()) {
            (Some(a), Some(b)) => Expr::num(a.powf(b)),
            (_, Some(b)) if b == 1.0 => self.clone(),
            (_, Some(b)) if b == 0.0 => Expr::num(1.0),
            (Some(a), _) if a == 1.0 => Expr::num(1.0),
            _ => Expr::wrap(Node::Pow(self.clone(), e)),
        }
    }

    pub fn powi(&self, k: i32) -> Expr {
        self.pow(k as f64)
    }

    pub fn call(f: Func, a: &Expr) -> Expr {
        if let Some(c) = a.as_const() {
            return Expr::num(f.apply(c));
        }
        Expr::wrap(Node::Call(f, a.clone()))
    }

    pub fn sqrt(&self) -> Expr {
        Expr::call(Func::Sqrt, self)
    }
    pub fn sin(&self) -> Expr {
        Expr::call(Func::Sin, self)
    }
    pub fn cos(&self) -> Expr {
        Expr::call(Func::Cos, self)
    }
    pub fn tan(&self) -> Expr {
        Expr::call(Func::Tan, self)
    }
    pub fn exp(&self) -> Expr {
        Expr::call(Func::Exp, self)
    }
    pub fn ln(&self) -> Expr {
        Expr::call(Func::Log, self)
    }

    pub fn piecewise(switch: &Expr, below: &Expr, above: &Expr) -> Expr {
        if let Some(s) = switch.as_const() {
            return if s < 0.0 { below.clone() } else { above.clone() };
        }
        if below == above {
            return below.clone();
        }
        Expr::wrap(Node::Piecewise {
            switch: switch.clone(),
            below: below.clone(),
            above: above.clone(),
        })
    }

    /// Names of all variables occurring in the tree.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n| {
            if let Node::Var(v) = n {
                if !out.iter().any(|o: &String| o.as_str() == &**v) {
                    out.push(v.to_string());
                }
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Node)) {
        f(&self.0);
        match &*self.0 {
            Node::Const(_) | Node::Var(_) => {}
            Node::Neg(a) | Node::Call(_, a) => a.visit(f),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Node::Piecewise { switch, below, above } => {
                switch.visit(f);
                below.visit(f);
                above.visit(f);
            }
        }
    }

    /// Evaluates with variables looked up by name. Unknown names give NaN.
    pub fn eval(&self, env: &dyn Fn(&str) -> Option<f64>) -> f64 {
        match &*self.0 {
            Node::Const(c) => *c,
            Node::Var(v) => env(v).unwrap_or(f64::NAN),
            Node::Neg(a) => -a.eval(env),
            Node::Add(a, b) => a.eval(env) + b.eval(env),
            Node::Sub(a, b) => a.eval(env) - b.eval(env),
            Node::Mul(a, b) => a.eval(env) * b.eval(env),
            Node::Div(a, b) => a.eval(env) / b.eval(env),
            Node::Pow(a, b) => pow(a.eval(env), b.eval(env)),
            Node::Call(f, a) => f.apply(a.eval(env)),
            Node::Piecewise { switch, below, above } => {
                if switch.eval(env) < 0.0 {
                    below.eval(env)
                } else {
                    above.eval(env)
                }
            }
        }
    }

    /// Replaces variables by expressions.
    pub fn substitute(&self, map: &HashMap<String, Expr>) -> Expr {
        let mut memo = HashMap::new();
        self.subst_memo(map, &mut memo)
    }

    fn subst_memo(&self, map: &HashMap<String, Expr>, memo: &mut HashMap<usize, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.id()) {
            return e.clone();
        }
        let out = match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(v) => map.get(&**v).cloned().unwrap_or_else(|| self.clone()),
            Node::Neg(a) => -a.subst_memo(map, memo),
            Node::Add(a, b) => a.subst_memo(map, memo) + b.subst_memo(map, memo),
            Node::Sub(a, b) => a.subst_memo(map, memo) - b.subst_memo(map, memo),
            Node::Mul(a, b) => a.subst_memo(map, memo) * b.subst_memo(map, memo),
            Node::Div(a, b) => a.subst_memo(map, memo) / b.subst_memo(map, memo),
            Node::Pow(a, b) => a.subst_memo(map, memo).pow(b.subst_memo(map, memo)),
            Node::Call(f, a) => Expr::call(*f, &a.subst_memo(map, memo)),
            Node::Piecewise { switch, below, above } => Expr::piecewise(
                &switch.subst_memo(map, memo),
                &below.subst_memo(map, memo),
                &above.subst_memo(map, memo),
            ),
        };
        memo.insert(self.id(), out.clone());
        out
    }

    /// Symbolic partial derivative. Subtrees shared in the input stay shared
    /// in the output.
    pub fn differentiate(&self, var: &str) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(var, &mut memo)
    }

    fn diff_memo(&self, var: &str, memo: &mut HashMap<usize, Expr>) -> Expr {
        if let Some(d) = memo.get(&self.id()) {
            return d.clone();
        }
        let zero = || Expr::num(0.0);
        let d = match &*self.0 {
            Node::Const(_) => zero(),
            Node::Var(v) => Expr::num(if &**v == var { 1.0 } else { 0.0 }),
            Node::Neg(a) => -a.diff_memo(var, memo),
            Node::Add(a, b) => a.diff_memo(var, memo) + b.diff_memo(var, memo),
            Node::Sub(a, b) => a.diff_memo(var, memo) - b.diff_memo(var, memo),
            Node::Mul(a, b) => {
                let (da, db) = (a.diff_memo(var, memo), b.diff_memo(var, memo));
                da * b.clone() + a.clone() * db
            }
            Node::Div(a, b) => {
                let (da, db) = (a.diff_memo(var, memo), b.diff_memo(var, memo));
                if db.is(0.0) {
                    da / b.clone()
                } else {
                    (da * b.clone() - a.clone() * db) / b.powi(2)
                }
            }
            Node::Pow(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                if db.is(0.0) {
                    // d(a^c) = c a^(c-1) a'
                    if da.is(0.0) {
                        zero()
                    } else {
                        b.clone() * a.pow(b.clone() - Expr::num(1.0)) * da
                    }
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    self.clone() * (db * a.ln() + b.clone() * da / a.clone())
                }
            }
            Node::Call(f, a) => {
                let da = a.diff_memo(var, memo);
                if da.is(0.0) {
                    zero()
                } else {
                    let outer = match f {
                        Func::Sqrt => Expr::num(0.5) / self.clone(),
                        Func::Sin => a.cos(),
                        Func::Cos => -a.sin(),
                        Func::Tan => Expr::num(1.0) / a.cos().powi(2),
                        Func::Exp => self.clone(),
                        Func::Log => Expr::num(1.0) / a.clone(),
                    };
                    outer * da
                }
            }
            Node::Piecewise { switch, below, above } => {
                Expr::piecewise(switch, &below.diff_memo(var, memo), &above.diff_memo(var, memo))
            }
        };
        memo.insert(self.id(), d.clone());
        d
    }

    /// Number of distinct nodes (shared subtrees counted once).
    pub fn size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        fn walk(e: &Expr, seen: &mut std::collections::HashSet<usize>) {
            if !seen.insert(e.id()) {
                return;
            }
            match e.node() {
                Node::Const(_) | Node::Var(_) => {}
                Node::Neg(a) | Node::Call(_, a) => walk(a, seen),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                    walk(a, seen);
                    walk(b, seen);
                }
                Node::Piecewise { switch, below, above } => {
                    walk(switch, seen);
                    walk(below, seen);
                    walk(above, seen);
                }
            }
        }
        walk(self, &mut seen);
        seen.len()
    }
}

/// `powf` with exact small integer exponents, so that negative bases work.
pub(crate) fn pow(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else if b == 0.5 {
        a.sqrt()
    } else {
        a.powf(b)
    }
}

fn square_of(e: &Expr, f: Func) -> Option<&Expr> {
    if let Node::Pow(base, k) = e.node() {
        if k.is(2.0) {
            if let Node::Call(g, arg) = base.node() {
                if *g == f {
                    return Some(arg);
                }
            }
        }
    }
    None
}

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => return Expr::num(a + b),
            (Some(a), _) if a == 0.0 => return rhs,
            (_, Some(b)) if b == 0.0 => return self,
            _ => {}
        }
        if let (Some(u), Some(v)) = (square_of(&self, Func::Sin), square_of(&rhs, Func::Cos)) {
            if u == v {
                return Expr::num(1.0);
            }
        }
        if let (Some(u), Some(v)) = (square_of(&self, Func::Cos), square_of(&rhs, Func::Sin)) {
            if u == v {
                return Expr::num(1.0);
            }
        }
        if let Node::Neg(b) = rhs.node() {
            return self - b.clone();
        }
        Expr::wrap(Node::Add(self, rhs))
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => return Expr::num(a - b),
            (Some(a), _) if a == 0.0 => return -rhs,
            (_, Some(b)) if b == 0.0 => return self,
            _ => {}
        }
        if let Node::Neg(b) = rhs.node() {
            return self + b.clone();
        }
        Expr::wrap(Node::Sub(self, rhs))
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => return Expr::num(a * b),
            (Some(a), _) if a == 0.0 => return Expr::num(0.0),
            (_, Some(b)) if b == 0.0 => return Expr::num(0.0),
            (Some(a), _) if a == 1.0 => return rhs,
            (_, Some(b)) if b == 1.0 => return self,
            (Some(a), _) if a == -1.0 => return -rhs,
            (_, Some(b)) if b == -1.0 => return -self,
            _ => {}
        }
        Expr::wrap(Node::Mul(self, rhs))
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => return Expr::num(a / b),
            (Some(a), _) if a == 0.0 => return Expr::num(0.0),
            (_, Some(b)) if b == 1.0 => return self,
            _ => {}
        }
        Expr::wrap(Node::Div(self, rhs))
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::num(-c),
            Node::Neg(a) => a.clone(),
            _ => Expr::wrap(Node::Neg(self)),
        }
    }
}

// Precedence levels for printing: sums 1, products 2, unary minus 3, powers 4.
fn prec(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(_) => 3,
        Node::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

fn fmt_const(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if c.is_infinite() {
        if c > 0.0 {
            write!(f, "inf")
        } else {
            write!(f, "-inf")
        }
    } else if c == 0.0 {
        // keep the sign of negative zero out of the canonical form
        write!(f, "0")
    } else {
        write!(f, "{c:?}").map(|_| ())
    }
}

fn paren(e: &Expr, need: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if need {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => fmt_const(*c, f),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => {
                write!(f, "-")?;
                paren(a, prec(a) < 4, f)
            }
            Node::Add(a, b) => {
                paren(a, prec(a) < 1, f)?;
                write!(f, " + ")?;
                paren(b, prec(b) <= 1 || prec(b) == 3, f)
            }
            Node::Sub(a, b) => {
                paren(a, prec(a) < 1, f)?;
                write!(f, " - ")?;
                paren(b, prec(b) <= 1 || prec(b) == 3, f)
            }
            Node::Mul(a, b) => {
                paren(a, prec(a) < 2 || prec(a) == 3, f)?;
                write!(f, "*")?;
                paren(b, prec(b) <= 3, f)
            }
            Node::Div(a, b) => {
                paren(a, prec(a) < 2 || prec(a) == 3, f)?;
                write!(f, "/")?;
                paren(b, prec(b) <= 3, f)
            }
            Node::Pow(a, b) => {
                paren(a, prec(a) <= 4, f)?;
                write!(f, "^")?;
                paren(b, prec(b) < 4 || matches!(b.node(), Node::Pow(..)), f)
            }
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
            Node::Piecewise { switch, below, above } => write!(f, "piecewise({switch}, {below}, {above})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(e: &Expr, x: f64) -> f64 {
        e.eval(&|n| (n == "x").then_some(x))
    }

    #[test]
    fn power_rule() {
        let x = Expr::var("x");
        let d = x.powi(2).differentiate("x");
        assert_eq!(at(&d, 3.0), 6.0);
    }

    #[test]
    fn constant_rule() {
        assert!(Expr::num(4.2).differentiate("x").is(0.0));
        assert!(Expr::var("y").differentiate("x").is(0.0));
    }

    #[test]
    fn sin_squared_slope_at_quarter_pi() {
        let th = Expr::var("x");
        let d = th.sin().powi(2).differentiate("x");
        assert!((at(&d, std::f64::consts::FRAC_PI_4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pythagorean_identity_folds() {
        let u = Expr::var("x") * Expr::num(2.0);
        let e = u.sin().powi(2) + u.cos().powi(2);
        assert!(e.is(1.0));
    }

    #[test]
    fn neutral_elements_fold() {
        let x = Expr::var("x");
        assert_eq!(x.clone() * Expr::num(1.0), x);
        assert_eq!(x.clone() + Expr::num(0.0), x);
        assert!((x.clone() * Expr::num(0.0)).is(0.0));
        assert_eq!(-(-x.clone()), x);
    }

    #[test]
    fn general_power_rule() {
        let x = Expr::var("x");
        let e = x.pow(x.clone());
        let d = e.differentiate("x");
        let x0: f64 = 1.7;
        let want = x0.powf(x0) * (x0.ln() + 1.0);
        assert!((at(&d, x0) - want).abs() < 1e-13);
    }

    #[test]
    fn piecewise_derivative_follows_branch() {
        let x = Expr::var("x");
        let e = Expr::piecewise(&(x.clone() - Expr::num(1.0)), &x.powi(3), &(x.clone() * Expr::num(3.0)));
        let d = e.differentiate("x");
        assert_eq!(at(&d, 0.5), 0.75);
        assert_eq!(at(&d, 2.0), 3.0);
    }

    #[test]
    fn shared_subtrees_stay_small() {
        let x = Expr::var("x");
        let mut e = x.clone();
        for _ in 0..30 {
            e = e.clone() * e.sin();
        }
        assert!(e.size() < 200);
        assert!(e.differentiate("x").size() < 2000);
    }
}
