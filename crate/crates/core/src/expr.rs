//! Scalar trigonometric shorthand such as "2 + cos(2*pi*x1) - 0.5*sin(x1 + x2)".
//!
//! Arguments of cos/sin must be linear in x1..xd (x is an alias for x1) and
//! their frequencies must be dual-lattice vectors.

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::linalg::C64;
use crate::periodic_fn::PeriodicMatrixFunction;
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_digit()
                    || chars[i] == '.'
                    || ((chars[i] == 'e' || chars[i] == 'E')
                        && i + 1 < chars.len()
                        && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '-' || chars[i + 1] == '+'))
                    || ((chars[i] == '-' || chars[i] == '+') && i > start && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
            {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| Error::Parse(format!("bad number '{text}'")))?));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

/// Either an affine form a·x + c or a trigonometric polynomial.
#[derive(Clone, Debug)]
enum Val {
    Lin(Vec<f64>, f64),
    Trig(Vec<(Vec<f64>, C64)>),
}

impl Val {
    fn constant(&self) -> Option<f64> {
        match self {
            Val::Lin(a, c) if a.iter().all(|x| *x == 0.0) => Some(*c),
            _ => None,
        }
    }

    fn into_trig(self, d: usize) -> Result<Vec<(Vec<f64>, C64)>> {
        match self {
            Val::Trig(t) => Ok(t),
            Val::Lin(a, c) => {
                if a.iter().any(|x| *x != 0.0) {
                    return Err(Error::Parse("coordinate appears outside cos/sin".into()));
                }
                Ok(vec![(vec![0.0; d], C64::new(c, 0.0))])
            }
        }
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    d: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(o)) if *o == c => {
                self.pos += 1;
                Ok(())
            }
            other => Err(Error::Parse(format!("expected '{c}', found {other:?}"))),
        }
    }

    fn add(&self, a: Val, b: Val, sign: f64) -> Result<Val> {
        match (a, b) {
            (Val::Lin(x, c), Val::Lin(y, e)) => {
                Ok(Val::Lin(x.iter().zip(&y).map(|(p, q)| p + sign * q).collect(), c + sign * e))
            }
            (a, b) => {
                let mut t = a.into_trig(self.d)?;
                t.extend(b.into_trig(self.d)?.into_iter().map(|(f, c)| (f, c * sign)));
                Ok(Val::Trig(t))
            }
        }
    }

    fn mul(&self, a: Val, b: Val) -> Result<Val> {
        if let Some(k) = a.constant() {
            return Ok(scale(b, k));
        }
        if let Some(k) = b.constant() {
            return Ok(scale(a, k));
        }
        let (ta, tb) = (a.into_trig(self.d)?, b.into_trig(self.d)?);
        let mut out = Vec::with_capacity(ta.len() * tb.len());
        for (fa, ca) in &ta {
            for (fb, cb) in &tb {
                out.push((fa.iter().zip(fb).map(|(x, y)| x + y).collect(), ca * cb));
            }
        }
        Ok(Val::Trig(out))
    }

    fn expr(&mut self) -> Result<Val> {
        let mut v = self.term()?;
        while let Some(Tok::Op(c)) = self.peek().cloned() {
            if c != '+' && c != '-' {
                break;
            }
            self.pos += 1;
            let rhs = self.term()?;
            v = self.add(v, rhs, if c == '+' { 1.0 } else { -1.0 })?;
        }
        Ok(v)
    }

    fn term(&mut self) -> Result<Val> {
        let mut v = self.factor()?;
        while let Some(Tok::Op(c)) = self.peek().cloned() {
            if c == '*' {
                self.pos += 1;
                let rhs = self.factor()?;
                v = self.mul(v, rhs)?;
            } else if c == '/' {
                self.pos += 1;
                let rhs = self.factor()?;
                let k = rhs.constant().ok_or_else(|| Error::Parse("division by a non-constant".into()))?;
                v = scale(v, 1.0 / k);
            } else {
                break;
            }
        }
        Ok(v)
    }

    fn factor(&mut self) -> Result<Val> {
        let tok = self.toks.get(self.pos).cloned().ok_or_else(|| Error::Parse("unexpected end".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(x) => Ok(Val::Lin(vec![0.0; self.d], x)),
            Tok::Op('-') => Ok(scale(self.factor()?, -1.0)),
            Tok::Op('+') => self.factor(),
            Tok::Op('(') => {
                let v = self.expr()?;
                self.expect(')')?;
                Ok(v)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => Ok(Val::Lin(vec![0.0; self.d], PI)),
                "cos" | "sin" => {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    let (a, c) = match arg {
                        Val::Lin(a, c) => (a, c),
                        _ => return Err(Error::Parse(format!("{name} argument must be linear in x"))),
                    };
                    let plus = C64::from_polar(1.0, c);
                    let minus = C64::from_polar(1.0, -c);
                    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
                    let (cp, cm) = if name == "cos" {
                        (plus * 0.5, minus * 0.5)
                    } else {
                        (plus * C64::new(0.0, -0.5), minus * C64::new(0.0, 0.5))
                    };
                    Ok(Val::Trig(vec![(a, cp), (neg, cm)]))
                }
                var => {
                    let idx = if var == "x" {
                        0
                    } else if let Some(rest) = var.strip_prefix('x') {
                        rest.parse::<usize>()
                            .ok()
                            .filter(|j| *j >= 1 && *j <= self.d)
                            .map(|j| j - 1)
                            .ok_or_else(|| Error::Parse(format!("unknown coordinate '{var}'")))?
                    } else {
                        return Err(Error::Parse(format!("unknown identifier '{var}'")));
                    };
                    let mut a = vec![0.0; self.d];
                    a[idx] = 1.0;
                    Ok(Val::Lin(a, 0.0))
                }
            },
            Tok::Op(c) => Err(Error::Parse(format!("unexpected '{c}'"))),
        }
    }
}

fn scale(v: Val, k: f64) -> Val {
    match v {
        Val::Lin(a, c) => Val::Lin(a.iter().map(|x| x * k).collect(), c * k),
        Val::Trig(t) => Val::Trig(t.into_iter().map(|(f, c)| (f, c * k)).collect()),
    }
}

/// Parse a scalar shorthand into a 1×1 field on `lattice`.
pub fn parse_scalar(lattice: &Lattice, text: &str) -> Result<PeriodicMatrixFunction> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0, d: lattice.dim };
    let v = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(Error::Parse(format!("trailing input in '{text}'")));
    }
    let terms = v.into_trig(lattice.dim)?;
    let mut coeffs = Vec::with_capacity(terms.len());
    for (xi, c) in terms {
        let m = lattice
            .dual_coords(&xi, 1e-9)
            .ok_or_else(|| Error::Parse(format!("frequency {xi:?} is not a dual-lattice vector")))?;
        coeffs.push((m, c));
    }
    let mut f = PeriodicMatrixFunction::scalar(lattice, &coeffs);
    f.coeffs.retain(|_, c| c[(0, 0)].norm() > 1e-15);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_shorthand() {
        let l = Lattice::cubic(1, 1.0);
        let g = parse_scalar(&l, "2 + cos(2*pi*x1)").unwrap();
        assert!((g.coeff(&[0])[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((g.coeff(&[1])[(0, 0)].re - 0.5).abs() < 1e-15);
        assert!((g.eval(&[0.3])[(0, 0)].re - (2.0 + (2.0 * PI * 0.3).cos())).abs() < 1e-14);
    }

    #[test]
    fn products_and_sines() {
        let l = Lattice::cubic(2, 2.0 * PI);
        let g = parse_scalar(&l, "1 - 0.5*sin(x1 + x2)*cos(2*x2) + 1e-1*sin(x2)").unwrap();
        let x = [0.4f64, -1.3];
        let want = 1.0 - 0.5 * (x[0] + x[1]).sin() * (2.0 * x[1]).cos() + 0.1 * x[1].sin();
        assert!((g.eval(&x)[(0, 0)] - C64::new(want, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rejects_off_lattice_frequency() {
        let l = Lattice::cubic(1, 1.0);
        assert!(matches!(parse_scalar(&l, "cos(x1)"), Err(Error::Parse(_))));
        assert!(matches!(parse_scalar(&l, "x1 + 1"), Err(Error::Parse(_))));
    }
}
