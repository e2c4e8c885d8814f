use std::fmt;

/// A CAN frame observation `{id, t(id)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanEvent {
    pub frame_id: u32,
    pub t_ms: u64,
}

impl CanEvent {
    pub fn new(frame_id: u32, t_ms: u64) -> Self {
        CanEvent { frame_id, t_ms }
    }
}

/// Events in timestamp order; ties keep arrival order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventSequence {
    events: Vec<CanEvent>,
}

impl EventSequence {
    pub fn new(mut events: Vec<CanEvent>) -> Self {
        events.sort_by_key(|e| e.t_ms);
        EventSequence { events }
    }

    pub fn events(&self) -> &[CanEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }
}

impl From<Vec<CanEvent>> for EventSequence {
    fn from(events: Vec<CanEvent>) -> Self {
        EventSequence::new(events)
    }
}

/// `p1 && p2 && ...`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub rules: Vec<Rule>,
}

/// `(Cx:<id,h> . Cy:<id,h> . expr REL threshold)`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub bindings: Vec<Binding>,
    pub predicate: Predicate,
}

/// Count variable bound to a frame id over a window of `h_ms`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub var: String,
    pub frame_id: u32,
    pub h_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub expr: Expr,
    pub rel: Rel,
    pub threshold: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Rel {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Rel::Lt => lhs < rhs,
            Rel::Le => lhs <= rhs,
            Rel::Gt => lhs > rhs,
            Rel::Ge => lhs >= rhs,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rel::Lt => "<",
            Rel::Le => "<=",
            Rel::Gt => ">",
            Rel::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `term { (+|-) term }`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub first: Term,
    pub rest: Vec<(Sign, Term)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Group(Box<Expr>),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr { first: Term::Var(name.into()), rest: Vec::new() }
    }

    /// Evaluates with `lookup` supplying each variable's count.
    pub fn eval(&self, lookup: &impl Fn(&str) -> i64) -> i64 {
        self.rest.iter().fold(self.first.eval(lookup), |acc, (sign, t)| match sign {
            Sign::Plus => acc + t.eval(lookup),
            Sign::Minus => acc - t.eval(lookup),
        })
    }

    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        for t in std::iter::once(&self.first).chain(self.rest.iter().map(|(_, t)| t)) {
            match t {
                Term::Var(v) => out.push(v),
                Term::Group(e) => e.collect_vars(out),
            }
        }
    }
}

impl Term {
    fn eval(&self, lookup: &impl Fn(&str) -> i64) -> i64 {
        match self {
            Term::Var(v) => lookup(v),
            Term::Group(e) => e.eval(lookup),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for b in &self.bindings {
            write!(f, "{}:<{:#x},{}> . ", b.var, b.frame_id, b.h_ms)?;
        }
        write!(f, "{} {} {})", self.predicate.expr, self.predicate.rel.as_str(), self.predicate.threshold)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        for (sign, t) in &self.rest {
            let s = if *sign == Sign::Plus { '+' } else { '-' };
            write!(f, " {s} {t}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => f.write_str(v),
            Term::Group(e) => write!(f, "({e})"),
        }
    }
}
