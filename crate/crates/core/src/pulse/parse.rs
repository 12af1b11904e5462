use std::fmt;

use thiserror::Error;

use super::{DurationSpec, Element, LaserPurpose, MwAngle, PulseSequence, SequenceError};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    Syntax(String),
    UnknownToken(String),
    MultipleSweepVariables(Vec<String>),
    Invalid(SequenceError),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            ParseErrorKind::UnknownToken(t) => write!(f, "unknown token `{t}`"),
            ParseErrorKind::MultipleSweepVariables(v) => {
                write!(f, "only one sweep variable is allowed, found {}", v.join(", "))
            }
            ParseErrorKind::Invalid(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Semi,
    LParen,
    RParen,
    Slash,
    At,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(n) => write!(f, "number {n}"),
            Tok::Semi => f.write_str("`;`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::At => f.write_str("`@`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn err(line: usize, column: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { line, column, kind }
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let single = match c {
            ';' => Some(Tok::Semi),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '/' => Some(Tok::Slash),
            '@' => Some(Tok::At),
            _ => None,
        };
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
        if let Some(tok) = single {
            out.push(Spanned { tok, line, column: col });
            i += 1;
            col += 1;
            continue;
        }
        let digit_at = |k: usize| chars.get(k).is_some_and(|c| c.is_ascii_digit());
        if c.is_ascii_digit() || ((c == '-' || c == '+' || c == '.') && (digit_at(i + 1) || (chars.get(i + 1) == Some(&'.') && digit_at(i + 2)))) {
            let start = i;
            if c == '-' || c == '+' {
                i += 1;
            }
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let sign = matches!(chars.get(i + 1), Some('+') | Some('-'));
                if digit_at(i + 1) || (sign && digit_at(i + 2)) {
                    i += if sign { 2 } else { 1 };
                    while digit_at(i) {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text
                .parse()
                .map_err(|_| err(start_line, start_col, ParseErrorKind::Syntax(format!("malformed number `{text}`"))))?;
            col += i - start;
            out.push(Spanned { tok: Tok::Number(value), line: start_line, column: start_col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Spanned { tok: Tok::Ident(text), line: start_line, column: start_col });
            continue;
        }
        return Err(err(line, col, ParseErrorKind::UnknownToken(c.to_string())));
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

fn is_symbol(name: &str) -> bool {
    name.starts_with("tau")
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    symbols: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, at: &Spanned, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(err(at.line, at.column, ParseErrorKind::Syntax(msg.into())))
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let t = self.next();
        if t.tok == want {
            Ok(())
        } else {
            self.syntax(&t, format!("expected {want}, found {}", t.tok))
        }
    }

    fn note_symbol(&mut self, name: &str, at: &Spanned) -> Result<(), ParseError> {
        if !self.symbols.iter().any(|s| s == name) {
            self.symbols.push(name.to_string());
        }
        if self.symbols.len() > 1 {
            return Err(err(at.line, at.column, ParseErrorKind::MultipleSweepVariables(self.symbols.clone())));
        }
        Ok(())
    }

    fn sequence(&mut self) -> Result<Vec<Element>, ParseError> {
        let mut elements = vec![self.element()?];
        loop {
            let t = self.next();
            match &t.tok {
                Tok::Semi => elements.push(self.element()?),
                Tok::Eof => return Ok(elements),
                other => return self.syntax(&t, format!("expected `;` or end of input, found {other}")),
            }
        }
    }

    /// `number unit`, in ns.
    fn fixed_duration(&mut self) -> Result<f64, ParseError> {
        let t = self.next();
        let Tok::Number(v) = t.tok else {
            return self.syntax(&t, format!("expected a duration, found {}", t.tok));
        };
        if v < 0.0 {
            return self.syntax(&t, "durations must be non-negative");
        }
        let u = self.next();
        let scale = match &u.tok {
            Tok::Ident(s) if s == "ns" => 1.0,
            Tok::Ident(s) if s == "us" || s == "µs" || s == "μs" => 1e3,
            Tok::Ident(s) if s == "ms" => 1e6,
            other => return self.syntax(&u, format!("expected a unit (ns, us, ms), found {other}")),
        };
        Ok(v * scale)
    }

    fn duration_or_symbol(&mut self) -> Result<DurationSpec, ParseError> {
        let t = self.peek().clone();
        if let Tok::Ident(name) = &t.tok {
            if is_symbol(name) {
                self.next();
                self.note_symbol(name, &t)?;
                return Ok(DurationSpec::Symbol(name.clone()));
            }
        }
        Ok(DurationSpec::Fixed(self.fixed_duration()?))
    }

    fn parenthesized<T>(&mut self, inner: impl FnOnce(&mut Self) -> Result<T, ParseError>) -> Result<T, ParseError> {
        self.expect(Tok::LParen)?;
        let v = inner(self)?;
        self.expect(Tok::RParen)?;
        Ok(v)
    }

    fn phase(&mut self) -> Result<f64, ParseError> {
        if self.peek().tok != Tok::At {
            return Ok(0.0);
        }
        self.next();
        let t = self.next();
        match &t.tok {
            Tok::Number(v) => Ok(*v),
            other => self.syntax(&t, format!("expected a phase in degrees, found {other}")),
        }
    }

    fn element(&mut self) -> Result<Element, ParseError> {
        let t = self.next();
        let name = match &t.tok {
            Tok::Ident(n) => n.clone(),
            other => return self.syntax(&t, format!("expected a sequence element, found {other}")),
        };
        match name.as_str() {
            "pump" => Ok(Element::Laser(LaserPurpose::Pump)),
            "readout" => Ok(Element::Laser(LaserPurpose::Readout)),
            "camera" => {
                let d = self.parenthesized(Self::fixed_duration)?;
                Ok(Element::CameraWindow { duration_ns: d })
            }
            "delay" => Ok(Element::Delay(self.parenthesized(Self::duration_or_symbol)?)),
            "pi" => {
                let angle = if self.peek().tok == Tok::Slash {
                    self.next();
                    let d = self.next();
                    if d.tok != Tok::Number(2.0) {
                        return self.syntax(&d, "only pi and pi/2 rotations are supported");
                    }
                    MwAngle::HalfPi
                } else {
                    MwAngle::Pi
                };
                Ok(Element::Mw { angle, phase_deg: self.phase()? })
            }
            "mw" => {
                let d = self.parenthesized(Self::duration_or_symbol)?;
                Ok(Element::Mw {
                    angle: MwAngle::Explicit(d),
                    phase_deg: self.phase()?,
                })
            }
            s if is_symbol(s) => {
                self.note_symbol(s, &t)?;
                Ok(Element::Delay(DurationSpec::Symbol(name)))
            }
            _ => Err(err(t.line, t.column, ParseErrorKind::UnknownToken(name))),
        }
    }
}

/// Parses sequence source text.
pub fn parse(text: &str) -> Result<PulseSequence, ParseError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        symbols: Vec::new(),
    };
    let elements = p.sequence()?;
    PulseSequence::new(elements).map_err(|e| err(1, 1, ParseErrorKind::Invalid(e)))
}
