use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::perception::ProviderRole;

/// Every expression denotes a set of track ids in the current frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    /// Every object in the current frame.
    All,
    /// Output set of another plan node.
    Node(String),
    Category(String),
    Attr {
        key: AttrKey,
        cmp: Comparator,
        value: f64,
    },
    Spatial {
        pred: SpatialPred,
        subject: Box<Expr>,
        target: Box<Expr>,
    },
    Temporal {
        op: TemporalOp,
        args: Vec<Expr>,
        /// Optional look-back in frames (`moved` only).
        span: Option<u32>,
    },
    And(Vec<Expr>),
    Or(Vec<Expr>),
    Not(Box<Expr>),
    Select {
        selector: Selector,
        args: Vec<Expr>,
    },
    /// Free-text selection answered by the semantic provider.
    Semantic(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialPred {
    Behind,
    InFrontOf,
    Above,
    Below,
    LeftOf,
    RightOf,
    Near,
    Overlaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalOp {
    Moved,
    Entered,
    Exited,
    MovingToward,
    After,
    Before,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Largest,
    Smallest,
    ClosestTo,
    FarthestFrom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKey {
    Area,
    Depth,
    X,
    Y,
    Vx,
    Vy,
    Speed,
    Age,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

macro_rules! named {
    ($ty:ty { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$(<$ty>::$variant),+];

            pub fn name(&self) -> &'static str {
                match self { $(<$ty>::$variant => $name),+ }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s { $($name => Some(<$ty>::$variant),)+ _ => None }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named!(SpatialPred {
    Behind => "behind",
    InFrontOf => "in_front_of",
    Above => "above",
    Below => "below",
    LeftOf => "left_of",
    RightOf => "right_of",
    Near => "near",
    Overlaps => "overlaps",
});

named!(TemporalOp {
    Moved => "moved",
    Entered => "entered",
    Exited => "exited",
    MovingToward => "moving_toward",
    After => "after",
    Before => "before",
});

named!(Selector {
    Largest => "largest",
    Smallest => "smallest",
    ClosestTo => "closest_to",
    FarthestFrom => "farthest_from",
});

named!(AttrKey {
    Area => "area",
    Depth => "depth",
    X => "x",
    Y => "y",
    Vx => "vx",
    Vy => "vy",
    Speed => "speed",
    Age => "age",
});

named!(Comparator {
    Lt => "<",
    Le => "<=",
    Gt => ">",
    Ge => ">=",
    Eq => "=",
});

impl SpatialPred {
    pub fn needs_depth(&self) -> bool {
        matches!(self, SpatialPred::Behind | SpatialPred::InFrontOf)
    }
}

impl TemporalOp {
    pub fn arity(&self) -> usize {
        match self {
            TemporalOp::Moved | TemporalOp::Entered | TemporalOp::Exited => 1,
            TemporalOp::MovingToward | TemporalOp::After | TemporalOp::Before => 2,
        }
    }
}

impl Selector {
    pub fn arity(&self) -> usize {
        match self {
            Selector::Largest | Selector::Smallest => 1,
            Selector::ClosestTo | Selector::FarthestFrom => 2,
        }
    }
}

impl Comparator {
    pub fn holds(&self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
        }
    }
}

/// Fixed operator vocabulary, listed in `UnknownPredicate` errors.
pub fn supported_operators() -> Vec<&'static str> {
    let mut ops = vec!["all", "node", "category", "attr", "and", "or", "not", "select"];
    ops.extend(SpatialPred::ALL.iter().map(|p| p.name()));
    ops.extend(TemporalOp::ALL.iter().map(|p| p.name()));
    ops.extend(Selector::ALL.iter().map(|p| p.name()));
    ops
}

impl Expr {
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::All | Expr::Node(_) | Expr::Category(_) | Expr::Attr { .. } | Expr::Semantic(_) => {
                vec![]
            }
            Expr::Spatial {
                subject, target, ..
            } => vec![subject, target],
            Expr::Temporal { args, .. } | Expr::And(args) | Expr::Or(args) | Expr::Select { args, .. } => {
                args.iter().collect()
            }
            Expr::Not(e) => vec![e],
        }
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Perception roles the expression needs beyond the segmenter.
    pub fn required_roles(&self) -> BTreeSet<ProviderRole> {
        let mut roles = BTreeSet::new();
        self.walk(&mut |e| match e {
            Expr::Spatial { pred, .. } if pred.needs_depth() => {
                roles.insert(ProviderRole::Depth);
            }
            Expr::Attr {
                key: AttrKey::Depth,
                ..
            } => {
                roles.insert(ProviderRole::Depth);
            }
            _ => {}
        });
        roles
    }

    /// Plan node ids referenced through `(node "...")`.
    pub fn node_refs(&self) -> BTreeSet<String> {
        let mut refs = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Node(id) = e {
                refs.insert(id.clone());
            }
        });
        refs
    }

    pub fn uses_temporal(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| found |= matches!(e, Expr::Temporal { .. }));
        found
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }
}

fn write_str_lit(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Canonical S-expression rendering; `parse_program` reads it back to an
/// equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, head: &str, args: &[&Expr]| {
            write!(f, "({head}")?;
            for a in args {
                write!(f, " {a}")?;
            }
            f.write_str(")")
        };
        match self {
            Expr::All => f.write_str("(all)"),
            Expr::Node(id) => {
                f.write_str("(node ")?;
                write_str_lit(f, id)?;
                f.write_str(")")
            }
            Expr::Category(c) => {
                f.write_str("(category ")?;
                write_str_lit(f, c)?;
                f.write_str(")")
            }
            Expr::Semantic(text) => {
                f.write_str("(select ")?;
                write_str_lit(f, text)?;
                f.write_str(")")
            }
            Expr::Attr { key, cmp, value } => write!(f, "(attr {key} {cmp} {value:?})"),
            Expr::Spatial {
                pred,
                subject,
                target,
            } => list(f, pred.name(), &[subject, target]),
            Expr::Temporal { op, args, span } => {
                write!(f, "({op}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                if let Some(n) = span {
                    write!(f, " {n}")?;
                }
                f.write_str(")")
            }
            Expr::And(args) => list(f, "and", &args.iter().collect::<Vec<_>>()),
            Expr::Or(args) => list(f, "or", &args.iter().collect::<Vec<_>>()),
            Expr::Not(e) => list(f, "not", &[e]),
            Expr::Select { selector, args } => {
                list(f, selector.name(), &args.iter().collect::<Vec<_>>())
            }
        }
    }
}

/// Parsed program with its source form.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateProgram {
    pub root: Expr,
}

impl fmt::Display for PredicateProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
