use super::ast::*;
use super::LangError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Num(f64, String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Dot,
    ColonColon,
    Neck,
    Tilde,
    Not,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) | Tok::Var(s) => format!("`{s}`"),
            Tok::Num(_, s) => format!("number `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::ColonColon => "`::`".into(),
            Tok::Neck => "`:-`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Not => "`\\+`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, message: String| LangError::Syntax { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let mut push = |tok: Tok, len: usize, i: &mut usize, col: &mut usize| {
            out.push(Spanned { tok, line: tl, col: tc });
            *i += len;
            *col += len;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            '{' => push(Tok::LBrace, 1, &mut i, &mut col),
            '}' => push(Tok::RBrace, 1, &mut i, &mut col),
            '[' => push(Tok::LBracket, 1, &mut i, &mut col),
            ']' => push(Tok::RBracket, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '.' => push(Tok::Dot, 1, &mut i, &mut col),
            '~' => push(Tok::Tilde, 1, &mut i, &mut col),
            ':' if chars.get(i + 1) == Some(&':') => push(Tok::ColonColon, 2, &mut i, &mut col),
            ':' if chars.get(i + 1) == Some(&'-') => push(Tok::Neck, 2, &mut i, &mut col),
            '\\' if chars.get(i + 1) == Some(&'+') => push(Tok::Not, 2, &mut i, &mut col),
            '<' => push(Tok::Cmp(CmpOp::Lt), 1, &mut i, &mut col),
            '=' if chars.get(i + 1) == Some(&'<') => push(Tok::Cmp(CmpOp::Le), 2, &mut i, &mut col),
            '>' if chars.get(i + 1) == Some(&'=') => push(Tok::Cmp(CmpOp::Ge), 2, &mut i, &mut col),
            '>' => push(Tok::Cmp(CmpOp::Gt), 1, &mut i, &mut col),
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '-' || chars[k] == '+') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[start..j].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| err(tl, tc, format!("malformed number `{text}`")))?;
                let len = j - start;
                push(Tok::Num(value, text), len, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[start..j].iter().collect();
                let tok = if c.is_uppercase() || c == '_' {
                    Tok::Var(text)
                } else {
                    Tok::Ident(text)
                };
                let len = j - start;
                push(tok, len, &mut i, &mut col);
            }
            other => return Err(err(tl, tc, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

pub(super) struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

pub(super) enum Statement {
    Clause(Clause, usize, usize),
    Doubt(DoubtFeatureDecl, usize, usize),
}

impl Parser {
    pub(super) fn new(src: &str) -> Result<Self, LangError> {
        Ok(Self { toks: lex(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, LangError> {
        let (line, col) = self.here();
        Err(LangError::Syntax {
            line,
            col,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok) -> Result<(), LangError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected {}, found {}", want.describe(), self.peek().describe()))
        }
    }

    pub(super) fn statements(&mut self) -> Result<Vec<Statement>, LangError> {
        let mut out = Vec::new();
        while *self.peek() != Tok::Eof {
            out.push(self.statement()?);
        }
        Ok(out)
    }

    fn statement(&mut self) -> Result<Statement, LangError> {
        if matches!(self.peek(), Tok::Ident(s) if s == "doubt_feature") && *self.peek2() == Tok::LParen {
            let (line, col) = self.here();
            return Ok(Statement::Doubt(self.doubt_feature()?, line, col));
        }
        let (line, col) = self.here();
        let prob = if let Tok::Num(p, _) = *self.peek() {
            self.bump();
            self.expect(Tok::ColonColon)?;
            Some(p)
        } else {
            None
        };
        let head = self.atom()?;
        let dist = if *self.peek() == Tok::Tilde {
            if prob.is_some() {
                return self.error("a clause cannot carry both a probability and a distribution");
            }
            self.bump();
            Some(self.dist()?)
        } else {
            None
        };
        let mut body = Vec::new();
        if *self.peek() == Tok::Neck {
            self.bump();
            loop {
                body.push(self.literal()?);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Dot)?;
        let kind = match (prob, dist) {
            (Some(p), _) => ClauseKind::Categorical(p),
            (None, Some(d)) => ClauseKind::Continuous(d),
            (None, None) => ClauseKind::Deterministic,
        };
        Ok(Statement::Clause(Clause { kind, head, body }, line, col))
    }

    fn doubt_feature(&mut self) -> Result<DoubtFeatureDecl, LangError> {
        self.bump();
        self.expect(Tok::LParen)?;
        let name = self.ident("a feature name")?;
        self.expect(Tok::Comma)?;
        let domain = match self.peek() {
            Tok::LBrace => {
                self.bump();
                let mut cats = Vec::new();
                loop {
                    cats.push(self.ident("a category name")?);
                    match self.peek().clone() {
                        Tok::Comma => {
                            self.bump();
                        }
                        Tok::RBrace => {
                            self.bump();
                            break;
                        }
                        other => return self.error(format!("expected `,` or `}}`, found {}", other.describe())),
                    }
                }
                FeatureDomain::Categorical(cats)
            }
            Tok::LBracket => {
                self.bump();
                let a = self.number()?;
                self.expect(Tok::Comma)?;
                let b = self.number()?;
                self.expect(Tok::RBracket)?;
                FeatureDomain::Interval(a, b)
            }
            other => return self.error(format!("expected `{{` or `[`, found {}", other.describe())),
        };
        self.expect(Tok::RParen)?;
        self.expect(Tok::Dot)?;
        Ok(DoubtFeatureDecl { name, domain })
    }

    fn ident(&mut self, what: &str) -> Result<String, LangError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => self.error(format!("expected {what}, found {}", other.describe())),
        }
    }

    fn number(&mut self) -> Result<f64, LangError> {
        match self.peek().clone() {
            Tok::Num(v, _) => {
                self.bump();
                Ok(v)
            }
            other => self.error(format!("expected a number, found {}", other.describe())),
        }
    }

    fn dist(&mut self) -> Result<DistSpec, LangError> {
        match self.peek().clone() {
            Tok::Ident(s) if s == "normal" => {
                self.bump();
                self.expect(Tok::LParen)?;
                let mean = self.number()?;
                self.expect(Tok::Comma)?;
                let variance = self.number()?;
                self.expect(Tok::RParen)?;
                Ok(DistSpec::Normal { mean, variance })
            }
            other => self.error(format!("unknown distribution {}", other.describe())),
        }
    }

    fn literal(&mut self) -> Result<Literal, LangError> {
        if *self.peek() == Tok::Not {
            self.bump();
            return Ok(Literal::Neg(self.atom()?));
        }
        let atom = self.atom()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let threshold = self.number()?;
            return Ok(Literal::Cmp { atom, op, threshold });
        }
        Ok(Literal::Pos(atom))
    }

    fn atom(&mut self) -> Result<Atom, LangError> {
        let predicate = match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                s
            }
            other => return self.error(format!("expected a predicate name, found {}", other.describe())),
        };
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.bump();
            loop {
                args.push(self.term()?);
                match self.peek().clone() {
                    Tok::Comma => {
                        self.bump();
                    }
                    Tok::RParen => {
                        self.bump();
                        break;
                    }
                    other => return self.error(format!("expected `,` or `)`, found {}", other.describe())),
                }
            }
        }
        Ok(Atom { predicate, args })
    }

    fn term(&mut self) -> Result<Term, LangError> {
        match self.peek().clone() {
            Tok::Var(v) => {
                self.bump();
                Ok(Term::Var(v))
            }
            Tok::Ident(s) => {
                if *self.peek2() == Tok::LParen {
                    return self.error(format!(
                        "function symbol `{s}(...)` in argument position; only constants and variables are allowed"
                    ));
                }
                self.bump();
                Ok(Term::Const(s))
            }
            Tok::Num(v, _) => {
                self.bump();
                Ok(Term::Const(fmt_num(v)))
            }
            other => self.error(format!("expected a term, found {}", other.describe())),
        }
    }
}

/// Parses a single atom such as `over(x, red)`.
pub(super) fn parse_atom(src: &str) -> Result<Atom, LangError> {
    let mut p = Parser::new(src)?;
    let atom = p.atom()?;
    if *p.peek() != Tok::Eof {
        return p.error(format!("unexpected {} after atom", p.peek().describe()));
    }
    Ok(atom)
}
