//! Reader for the `.gmet` metric format.
//!
//! ```text
//! # round unit sphere
//! dim 2;
//! coords th ph;
//! domain th in [0, pi] ph in [0, 2*pi];
//! periodic ph = 2*pi;
//! g = [[1, 0], [0, sin(th)^2]];
//! ```

use std::collections::HashSet;

use super::expr::{Expr, Func};
use super::metric::{Interval, MetricSpec};
use super::DslError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, DslError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
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
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let s = i;
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
            let text: String = chars[s..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| DslError::Syntax {
                line,
                col: start_col,
                msg: format!("malformed number `{text}`"),
            })?;
            col += i - s;
            out.push(Token { tok: Tok::Num(v), line, col: start_col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - s;
            out.push(Token { tok: Tok::Ident(chars[s..i].iter().collect()), line, col: start_col });
            continue;
        }
        if "[](),;=+-*/^".contains(c) {
            out.push(Token { tok: Tok::Sym(c), line, col });
            i += 1;
            col += 1;
            continue;
        }
        return Err(DslError::Syntax { line, col, msg: format!("unexpected character `{c}`") });
    }
    out.push(Token { tok: Tok::End, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Variable references with their positions, checked once all
    /// declarations are known.
    refs: Vec<(String, usize, usize)>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, DslError> {
        let t = self.peek();
        Err(DslError::Syntax { line: t.line, col: t.col, msg: msg.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), DslError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn ident(&mut self) -> Result<String, DslError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => self.err("expected a name"),
        }
    }

    fn at_ident(&self) -> bool {
        matches!(self.peek().tok, Tok::Ident(_))
    }

    fn at_stmt_end(&self) -> bool {
        matches!(self.peek().tok, Tok::Sym(';') | Tok::End)
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = lhs + self.term()?;
            } else if self.eat('-') {
                lhs = lhs - self.term()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = lhs * self.unary()?;
            } else if self.eat('/') {
                lhs = lhs / self.unary()?;
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, DslError> {
        if self.eat('-') {
            return Ok(-self.unary()?);
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, DslError> {
        let base = self.atom()?;
        if self.eat('^') {
            let e = self.unary()?;
            return Ok(base.pow(e));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, DslError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.next();
                Ok(Expr::num(v))
            }
            Tok::Sym('(') => {
                self.next();
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                if self.peek().tok == Tok::Sym('(') {
                    self.next();
                    if name == "piecewise" {
                        let s = self.expr()?;
                        self.expect(',')?;
                        let a = self.expr()?;
                        self.expect(',')?;
                        let b = self.expr()?;
                        self.expect(')')?;
                        return Ok(Expr::piecewise(&s, &a, &b));
                    }
                    let Some(f) = Func::from_name(&name) else {
                        return Err(DslError::Syntax {
                            line: t.line,
                            col: t.col,
                            msg: format!("unknown function `{name}`"),
                        });
                    };
                    let a = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::call(f, &a));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::num(std::f64::consts::PI)),
                    "inf" => Ok(Expr::num(f64::INFINITY)),
                    _ => {
                        self.refs.push((name.clone(), t.line, t.col));
                        Ok(Expr::var(&name))
                    }
                }
            }
            _ => self.err("expected an expression"),
        }
    }

    /// A constant expression such as `2*pi` or `-inf`.
    fn constant(&mut self) -> Result<f64, DslError> {
        let t = self.peek().clone();
        let mark = self.refs.len();
        let e = self.expr()?;
        if self.refs.len() > mark {
            let (name, line, col) = self.refs[mark].clone();
            return Err(DslError::Syntax { line, col, msg: format!("`{name}` is not a constant") });
        }
        e.as_const()
            .ok_or(DslError::Syntax { line: t.line, col: t.col, msg: "expected a constant".into() })
    }

    fn matrix(&mut self) -> Result<Vec<Vec<Expr>>, DslError> {
        self.expect('[')?;
        let mut rows = Vec::new();
        loop {
            self.expect('[')?;
            let mut row = vec![self.expr()?];
            while self.eat(',') {
                row.push(self.expr()?);
            }
            self.expect(']')?;
            rows.push(row);
            if !self.eat(',') {
                break;
            }
        }
        self.expect(']')?;
        Ok(rows)
    }
}

/// Parses `.gmet` source into a validated [`MetricSpec`].
pub fn parse_metric(src: &str) -> Result<MetricSpec, DslError> {
    let mut p = Parser { toks: lex(src)?, pos: 0, refs: Vec::new() };
    let mut dim: Option<(usize, usize, usize)> = None;
    let mut coords: Vec<String> = Vec::new();
    let mut params: Vec<(String, f64)> = Vec::new();
    let mut domain: Vec<(String, Interval)> = Vec::new();
    let mut periodic: Vec<(String, f64)> = Vec::new();
    let mut g: Option<(Vec<Vec<Expr>>, usize, usize)> = None;

    loop {
        while p.eat(';') {}
        if p.peek().tok == Tok::End {
            break;
        }
        let head = p.peek().clone();
        let kw = p.ident()?;
        match kw.as_str() {
            "dim" => {
                let v = p.constant()?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(DslError::Syntax {
                        line: head.line,
                        col: head.col,
                        msg: "dim must be a positive integer".into(),
                    });
                }
                dim = Some((v as usize, head.line, head.col));
            }
            "coords" => {
                while p.at_ident() {
                    let name = p.ident()?;
                    coords.push(name);
                }
            }
            "params" => {
                while p.at_ident() {
                    let name = p.ident()?;
                    p.expect('=')?;
                    let v = p.constant()?;
                    params.push((name, v));
                }
            }
            "domain" => {
                while p.at_ident() {
                    let name = p.ident()?;
                    if p.ident()? != "in" {
                        return p.err("expected `in`");
                    }
                    p.expect('[')?;
                    let lo = p.constant()?;
                    p.expect(',')?;
                    let hi = p.constant()?;
                    p.expect(']')?;
                    domain.push((name, Interval::new(lo, hi)));
                }
            }
            "periodic" => {
                while p.at_ident() {
                    let name = p.ident()?;
                    p.expect('=')?;
                    let v = p.constant()?;
                    periodic.push((name, v));
                }
            }
            "g" => {
                p.expect('=')?;
                let m = p.matrix()?;
                g = Some((m, head.line, head.col));
            }
            other => {
                return Err(DslError::Syntax {
                    line: head.line,
                    col: head.col,
                    msg: format!("unknown statement `{other}`"),
                })
            }
        }
        if !p.at_stmt_end() {
            return p.err("expected `;`");
        }
    }

    let Some((components, gl, gc)) = g else {
        return Err(DslError::Syntax { line: 1, col: 1, msg: "missing `g = [...]` statement".into() });
    };
    let n = components.len();
    if coords.is_empty() {
        return Err(DslError::Syntax { line: 1, col: 1, msg: "missing `coords` statement".into() });
    }
    if let Some((d, _, _)) = dim {
        if d != coords.len() {
            return Err(DslError::DimMismatch(format!("dim {d} but {} coordinates declared", coords.len())));
        }
    }
    if n != coords.len() || components.iter().any(|r| r.len() != n) {
        return Err(DslError::DimMismatch(format!(
            "component matrix at {gl}:{gc} is not {0}x{0}",
            coords.len()
        )));
    }

    let mut known: HashSet<&str> = coords.iter().map(|s| s.as_str()).collect();
    known.extend(params.iter().map(|(s, _)| s.as_str()));
    for (name, line, col) in &p.refs {
        if !known.contains(name.as_str()) {
            return Err(DslError::Unbound { name: name.clone(), line: *line, col: *col });
        }
    }

    let mut dom = vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY); n];
    for (name, iv) in domain {
        let i = coords.iter().position(|c| *c == name).ok_or_else(|| DslError::Domain(format!("`{name}` is not a coordinate")))?;
        dom[i] = iv;
    }
    let mut periods = vec![None; n];
    for (name, v) in periodic {
        let i = coords.iter().position(|c| *c == name).ok_or_else(|| DslError::Domain(format!("`{name}` is not a coordinate")))?;
        periods[i] = Some(v);
    }
    MetricSpec::new(coords, params, dom, periods, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_plane() {
        let m = parse_metric("dim 2; coords x y; g = [[1,0],[0,1]]").unwrap();
        assert_eq!(m.dim(), 2);
        let g = m.eval_metric(&[0.3, -2.0]);
        assert_eq!(g, nalgebra::DMatrix::identity(2, 2));
    }

    #[test]
    fn round_sphere_at_equator() {
        let m = parse_metric("dim 2; coords th ph; g = [[1,0],[0,sin(th)^2]]").unwrap();
        let g = m.eval_metric(&[std::f64::consts::FRAC_PI_2, 1.0]);
        assert!((g - nalgebra::DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-15);
    }

    #[test]
    fn non_symmetric_rejected() {
        let e = parse_metric("dim 2; coords x y; g = [[1,2],[3,4]]").unwrap_err();
        assert!(matches!(e, DslError::NonSymmetric(0, 1)), "{e}");
    }

    #[test]
    fn dimension_mismatch() {
        let e = parse_metric("dim 3; coords x y; g = [[1,0],[0,1]]").unwrap_err();
        assert!(matches!(e, DslError::DimMismatch(_)));
        let e = parse_metric("coords x y; g = [[1,0,0],[0,1,0],[0,0,1]]").unwrap_err();
        assert!(matches!(e, DslError::DimMismatch(_)));
    }

    #[test]
    fn unbound_parameter_position() {
        let e = parse_metric("coords x y;\ng = [[1,0],\n     [0, c*x^2 + 1]]").unwrap_err();
        match e {
            DslError::Unbound { name, line, col } => {
                assert_eq!((name.as_str(), line, col), ("c", 3, 10));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_error_position() {
        let e = parse_metric("coords x y;\ng = [[1,0],[0,1)]").unwrap_err();
        match e {
            DslError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 16)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn indefinite_rejected() {
        let e = parse_metric("coords x y; g = [[1,0],[0,-1]]").unwrap_err();
        assert!(matches!(e, DslError::NotPositiveDefinite { .. }), "{e}");
    }

    #[test]
    fn comments_and_whitespace() {
        let src = "# plane\n  dim   2 ;\ncoords x y # names\n; params c = 2 ;\n g=[[c,0],[0,c]];";
        let m = parse_metric(src).unwrap();
        assert_eq!(m.eval_metric(&[0.0, 0.0])[(1, 1)], 2.0);
    }

    #[test]
    fn constant_expressions_in_headers() {
        let m = parse_metric("coords r ph; domain r in [0, inf] ph in [0, 2*pi]; periodic ph = 2*pi; g = [[1,0],[0,r^2]]").unwrap();
        assert_eq!(m.domain()[1].hi, 2.0 * std::f64::consts::PI);
        assert!(m.domain()[0].hi.is_infinite());
        assert_eq!(m.periods()[1], Some(2.0 * std::f64::consts::PI));
    }
}
