use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agg {
    Sum,
    Count,
    Mean,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryFn {
    Log,
    Exp,
    Abs,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Literal {
    Number(f64),
    Text(String),
}

/// Expression tree of one feature assignment's right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Column(String),
    Const(Literal),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Compare {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    GroupTransform {
        keys: Vec<String>,
        target: String,
        agg: Agg,
    },
    /// Per-group mean squared deviation from the group mean.
    GroupVariance {
        keys: Vec<String>,
        target: String,
    },
    /// `source` where `condition` holds, else `fallback` (missing when absent).
    Where {
        source: Box<Expr>,
        condition: Box<Expr>,
        fallback: Option<Box<Expr>>,
    },
    Replace {
        source: Box<Expr>,
        mapping: Vec<(Literal, f64)>,
    },
    FillNa {
        source: Box<Expr>,
        value: f64,
    },
    Unary {
        func: UnaryFn,
        arg: Box<Expr>,
    },
}

impl Expr {
    pub fn depth(&self) -> usize {
        1 + match self {
            Expr::Column(_)
            | Expr::Const(_)
            | Expr::GroupTransform { .. }
            | Expr::GroupVariance { .. } => 0,
            Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                lhs.depth().max(rhs.depth())
            }
            Expr::Where {
                source,
                condition,
                fallback,
            } => source
                .depth()
                .max(condition.depth())
                .max(fallback.as_ref().map_or(0, |f| f.depth())),
            Expr::Replace { source, .. } | Expr::FillNa { source, .. } => source.depth(),
            Expr::Unary { arg, .. } => arg.depth(),
        }
    }

    /// Every column name the expression reads, in first-use order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        let mut push = |name: &'a str| {
            if !out.contains(&name) {
                out.push(name);
            }
        };
        match self {
            Expr::Column(name) => push(name),
            Expr::Const(_) => {}
            Expr::GroupTransform { keys, target, .. } | Expr::GroupVariance { keys, target } => {
                keys.iter().for_each(|k| push(k));
                push(target);
            }
            Expr::Binary { lhs, rhs, .. } | Expr::Compare { lhs, rhs, .. } => {
                lhs.collect_columns(out);
                rhs.collect_columns(out);
            }
            Expr::Where {
                source,
                condition,
                fallback,
            } => {
                source.collect_columns(out);
                condition.collect_columns(out);
                if let Some(f) = fallback {
                    f.collect_columns(out);
                }
            }
            Expr::Replace { source, .. } | Expr::FillNa { source, .. } => {
                source.collect_columns(out)
            }
            Expr::Unary { arg, .. } => arg.collect_columns(out),
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out.push('\'');
    out
}

impl fmt::Display for BinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        })
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

impl Agg {
    pub fn name(self) -> &'static str {
        match self {
            Agg::Sum => "sum",
            Agg::Count => "count",
            Agg::Mean => "mean",
            Agg::Min => "min",
            Agg::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Agg> {
        Some(match name {
            "sum" => Agg::Sum,
            "count" => Agg::Count,
            "mean" => Agg::Mean,
            "min" => Agg::Min,
            "max" => Agg::Max,
            _ => return None,
        })
    }
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Log => "log",
            UnaryFn::Exp => "exp",
            UnaryFn::Abs => "abs",
            UnaryFn::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<UnaryFn> {
        Some(match name {
            "log" => UnaryFn::Log,
            "exp" => UnaryFn::Exp,
            "abs" | "absolute" => UnaryFn::Abs,
            "sqrt" => UnaryFn::Sqrt,
            _ => return None,
        })
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(v) => write!(f, "{v}"),
            Literal::Text(s) => f.write_str(&quote(s)),
        }
    }
}

fn write_keys(f: &mut fmt::Formatter<'_>, keys: &[String]) -> fmt::Result {
    if let [single] = keys {
        return f.write_str(&quote(single));
    }
    let quoted: Vec<String> = keys.iter().map(|k| quote(k)).collect();
    write!(f, "[{}]", quoted.join(", "))
}

/// Writes `expr` so that a `.method(...)` suffix binds to all of it.
fn write_receiver(f: &mut fmt::Formatter<'_>, expr: &Expr) -> fmt::Result {
    match expr {
        Expr::Const(_) => write!(f, "({expr})"),
        _ => write!(f, "{expr}"),
    }
}

/// Prints the `df[...]` surface syntax accepted by the parser. Binary and
/// comparison nodes are always parenthesized, so reparsing yields the same
/// tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(name) => write!(f, "df[{}]", quote(name)),
            Expr::Const(lit) => write!(f, "{lit}"),
            Expr::Binary { op, lhs, rhs } => write!(f, "({lhs} {op} {rhs})"),
            Expr::Compare { op, lhs, rhs } => write!(f, "({lhs} {op} {rhs})"),
            Expr::GroupTransform { keys, target, agg } => {
                f.write_str("df.groupby(")?;
                write_keys(f, keys)?;
                write!(f, ")[{}].transform({})", quote(target), quote(agg.name()))
            }
            Expr::GroupVariance { keys, target } => {
                f.write_str("df.groupby(")?;
                write_keys(f, keys)?;
                write!(
                    f,
                    ")[{}].transform(lambda x: ((x - x.mean())**2).mean())",
                    quote(target)
                )
            }
            Expr::Where {
                source,
                condition,
                fallback,
            } => {
                write_receiver(f, source)?;
                match fallback {
                    Some(fb) => write!(f, ".where({condition}, {fb})"),
                    None => write!(f, ".where({condition})"),
                }
            }
            Expr::Replace { source, mapping } => {
                write_receiver(f, source)?;
                let pairs: Vec<String> = mapping.iter().map(|(k, v)| format!("{k}: {v}")).collect();
                write!(f, ".replace({{{}}})", pairs.join(", "))
            }
            Expr::FillNa { source, value } => {
                write_receiver(f, source)?;
                write!(f, ".fillna({value})")
            }
            Expr::Unary { func, arg } => write!(f, "np.{}({arg})", func.name()),
        }
    }
}

/// One named feature of a program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub expr: Expr,
    pub source_line: String,
}

impl fmt::Display for FeatureDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "df[{}] = {}", quote(&self.name), self.expr)
    }
}

/// Ordered, uniquely named feature definitions parsed from generated code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureProgram {
    pub features: Vec<FeatureDef>,
}

impl FeatureProgram {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// One canonical `df['name'] = ...` line per feature.
    pub fn pretty_lines(&self) -> Vec<String> {
        self.features.iter().map(|f| f.to_string()).collect()
    }
}
