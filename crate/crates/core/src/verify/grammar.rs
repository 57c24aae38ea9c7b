//! Closed numeric grammar for tier-1 equivalence checks.
//!
//! Grammar: integers, decimals, `a/b` fractions, `sqrt(...)`, `pi`, `e`,
//! `+ - * / ^`, parentheses, unary minus. Anything outside it fails to
//! parse and falls through to the tier-2 semantic judge.

/// Parses and evaluates an expression of the closed grammar.
/// `None` when the string is not fully covered by the grammar.
pub fn eval_expr(s: &str) -> Option<f64> {
    let tokens = tokenize(s)?;
    let mut parser = Parser { tokens, pos: 0 };
    let v = parser.expr()?;
    if parser.pos == parser.tokens.len() && v.is_finite() {
        Some(v)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Pi,
    E,
    Sqrt,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(s: &str) -> Option<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                toks.push(Tok::Plus);
                i += 1;
            }
            '-' | '\u{2212}' => {
                toks.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                toks.push(Tok::Star);
                i += 1;
            }
            '/' => {
                toks.push(Tok::Slash);
                i += 1;
            }
            '^' => {
                toks.push(Tok::Caret);
                i += 1;
            }
            '(' => {
                toks.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                toks.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut seen_dot = false;
                while i < chars.len()
                    && (chars[i].is_ascii_digit() || (chars[i] == '.' && !seen_dot))
                {
                    if chars[i] == '.' {
                        seen_dot = true;
                    }
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                toks.push(Tok::Num(text.parse().ok()?));
            }
            _ if c.is_ascii_alphabetic() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                match word.as_str() {
                    "pi" => toks.push(Tok::Pi),
                    "e" => toks.push(Tok::E),
                    "sqrt" => toks.push(Tok::Sqrt),
                    _ => return None,
                }
            }
            _ => return None,
        }
    }
    Some(toks)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Option<f64> {
        let mut v = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                v += self.term()?;
            } else if self.eat(&Tok::Minus) {
                v -= self.term()?;
            } else {
                return Some(v);
            }
        }
    }

    fn term(&mut self) -> Option<f64> {
        let mut v = self.factor()?;
        loop {
            if self.eat(&Tok::Star) {
                v *= self.factor()?;
            } else if self.eat(&Tok::Slash) {
                v /= self.factor()?;
            } else {
                return Some(v);
            }
        }
    }

    fn factor(&mut self) -> Option<f64> {
        if self.eat(&Tok::Minus) {
            return Some(-self.factor()?);
        }
        self.power()
    }

    fn power(&mut self) -> Option<f64> {
        let base = self.atom()?;
        if self.eat(&Tok::Caret) {
            // right-associative
            let exp = self.factor()?;
            return Some(base.powf(exp));
        }
        Some(base)
    }

    fn atom(&mut self) -> Option<f64> {
        match self.peek()?.clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Some(v)
            }
            Tok::Pi => {
                self.pos += 1;
                Some(std::f64::consts::PI)
            }
            Tok::E => {
                self.pos += 1;
                Some(std::f64::consts::E)
            }
            Tok::Sqrt => {
                self.pos += 1;
                if !self.eat(&Tok::LParen) {
                    return None;
                }
                let v = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return None;
                }
                Some(v.sqrt())
            }
            Tok::LParen => {
                self.pos += 1;
                let v = self.expr()?;
                if !self.eat(&Tok::RParen) {
                    return None;
                }
                Some(v)
            }
            _ => None,
        }
    }
}
