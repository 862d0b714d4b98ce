use std::fmt;

/// Argument of an atom. Constants are identifiers or numeric literals kept in
/// their printed form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Const(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Self {
            predicate: predicate.to_string(),
            args,
        }
    }

    pub fn signature(&self) -> Signature {
        Signature {
            name: self.predicate.clone(),
            arity: self.args.len(),
        }
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Predicate name with arity, e.g. `constitution/2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature {
    pub name: String,
    pub arity: usize,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "=<",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            CmpOp::Lt => value < threshold,
            CmpOp::Gt => value > threshold,
            CmpOp::Le => value <= threshold,
            CmpOp::Ge => value >= threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    /// Comparison of a distributional atom against a numeric threshold.
    Cmp { atom: Atom, op: CmpOp, threshold: f64 },
}

impl Literal {
    pub fn atom(&self) -> &Atom {
        match self {
            Literal::Pos(a) | Literal::Neg(a) => a,
            Literal::Cmp { atom, .. } => atom,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "\\+ {a}"),
            Literal::Cmp { atom, op, threshold } => {
                write!(f, "{atom} {} {}", op.symbol(), fmt_num(*threshold))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistSpec {
    /// Gaussian with mean and variance.
    Normal { mean: f64, variance: f64 },
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Normal { mean, variance } => {
                write!(f, "normal({}, {})", fmt_num(*mean), fmt_num(*variance))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClauseKind {
    Categorical(f64),
    Continuous(DistSpec),
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clause {
    pub kind: ClauseKind,
    pub head: Atom,
    pub body: Vec<Literal>,
}

impl Clause {
    pub fn is_probabilistic(&self) -> bool {
        !matches!(self.kind, ClauseKind::Deterministic)
    }

    /// Variables in order of first appearance (head first).
    pub fn vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let all = self.head.vars().chain(self.body.iter().flat_map(|l| l.atom().vars()));
        for v in all {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let ClauseKind::Categorical(p) = self.kind {
            write!(f, "{} :: ", fmt_num(p))?;
        }
        write!(f, "{}", self.head)?;
        if let ClauseKind::Continuous(d) = self.kind {
            write!(f, " ~ {d}")?;
        }
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            for (i, l) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{l}")?;
            }
        }
        f.write_str(".")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureDomain {
    Categorical(Vec<String>),
    Interval(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubtFeatureDecl {
    pub name: String,
    pub domain: FeatureDomain,
}

impl fmt::Display for DoubtFeatureDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.domain {
            FeatureDomain::Categorical(cats) => {
                write!(f, "doubt_feature({}, {{{}}}).", self.name, cats.join(", "))
            }
            FeatureDomain::Interval(a, b) => {
                write!(f, "doubt_feature({}, [{}, {}]).", self.name, fmt_num(*a), fmt_num(*b))
            }
        }
    }
}

/// A parsed and validated constitution.
#[derive(Debug, Clone)]
pub struct ConstitutionProgram {
    pub clauses: Vec<Clause>,
    pub doubt_features: Vec<DoubtFeatureDecl>,
    pub source_text: String,
}

impl PartialEq for ConstitutionProgram {
    /// Structural equality; the original source text is not compared.
    fn eq(&self, other: &Self) -> bool {
        self.clauses == other.clauses && self.doubt_features == other.doubt_features
    }
}

impl ConstitutionProgram {
    /// The single `constitution/2` clause.
    pub fn constitution_clause(&self) -> &Clause {
        self.clauses
            .iter()
            .find(|c| c.head.predicate == super::QUERY_PREDICATE && c.head.args.len() == 2)
            .expect("validated program defines constitution/2")
    }

    /// Canonical source form; re-parses to an equal program.
    pub fn pretty(&self) -> String {
        let mut out = String::new();
        for d in &self.doubt_features {
            out.push_str(&d.to_string());
            out.push('\n');
        }
        for c in &self.clauses {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}

/// Shortest round-tripping decimal form.
pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}
