use std::collections::HashMap;

use super::ast::{Agg, BinOp, CmpOp, Expr, FeatureProgram, Literal, UnaryFn};
use super::EvalError;
use crate::task::{ColumnData, Dataset};

/// Column-valued intermediate result.
#[derive(Debug, Clone)]
enum Values {
    Num(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Values {
    fn from_column(data: &ColumnData) -> Values {
        match data {
            ColumnData::Numeric(v) => Values::Num(v.clone()),
            ColumnData::Text(v) => Values::Text(v.clone()),
        }
    }

    /// Text cells become missing in a numeric context.
    fn numbers(&self) -> Vec<Option<f64>> {
        match self {
            Values::Num(v) => v.clone(),
            Values::Text(v) => vec![None; v.len()],
        }
    }

    fn into_column(self) -> ColumnData {
        match self {
            Values::Num(v) => ColumnData::Numeric(v),
            Values::Text(v) => ColumnData::Numeric(ColumnData::Text(v).to_numeric()),
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Computes every feature of `program` over `dataset` and returns a copy of
/// the dataset with the new columns appended in program order.
///
/// Undefined arithmetic (division by zero, log of a non-positive value,
/// overflow) yields a missing cell. A feature whose values are all missing,
/// or all identical, is rejected as degenerate.
pub fn evaluate(program: &FeatureProgram, dataset: &Dataset) -> Result<Dataset, EvalError> {
    let mut ctx = Context {
        dataset,
        rows: dataset.row_count(),
        added: HashMap::new(),
    };
    let mut out = Vec::with_capacity(program.len());
    for feature in &program.features {
        let column = ctx.eval(&feature.expr)?.into_column();
        if let Some(reason) = degenerate(&column) {
            return Err(EvalError::Degenerate {
                feature: feature.name.clone(),
                reason,
            });
        }
        ctx.added.insert(feature.name.clone(), column.clone());
        out.push((feature.name.clone(), column));
    }
    dataset
        .with_columns(out)
        .map_err(|e| EvalError::MissingColumn(e.to_string()))
}

fn degenerate(column: &ColumnData) -> Option<String> {
    let ColumnData::Numeric(values) = column else {
        return None;
    };
    let mut present = values.iter().flatten();
    let Some(first) = present.next() else {
        return Some("every value is missing".into());
    };
    let has_missing = values.iter().any(Option::is_none);
    if !has_missing && present.all(|v| v == first) {
        return Some(format!("constant value {first}"));
    }
    None
}

struct Context<'a> {
    dataset: &'a Dataset,
    rows: usize,
    added: HashMap<String, ColumnData>,
}

impl Context<'_> {
    fn column(&self, name: &str) -> Result<&ColumnData, EvalError> {
        self.added
            .get(name)
            .or_else(|| self.dataset.column(name))
            .ok_or_else(|| EvalError::MissingColumn(name.to_string()))
    }

    fn eval(&self, expr: &Expr) -> Result<Values, EvalError> {
        Ok(match expr {
            Expr::Column(name) => Values::from_column(self.column(name)?),
            Expr::Const(Literal::Number(v)) => Values::Num(vec![Some(*v); self.rows]),
            Expr::Const(Literal::Text(s)) => Values::Text(vec![Some(s.clone()); self.rows]),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.eval(lhs)?.numbers();
                let b = self.eval(rhs)?.numbers();
                Values::Num(
                    a.iter()
                        .zip(&b)
                        .map(|(x, y)| match (x, y) {
                            (Some(x), Some(y)) => finite(apply_bin(*op, *x, *y)),
                            _ => None,
                        })
                        .collect(),
                )
            }
            Expr::Compare { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                Values::Num(compare(*op, &a, &b))
            }
            Expr::Unary { func, arg } => Values::Num(
                self.eval(arg)?
                    .numbers()
                    .into_iter()
                    .map(|x| x.and_then(|x| finite(apply_unary(*func, x))))
                    .collect(),
            ),
            Expr::FillNa { source, value } => match self.eval(source)? {
                Values::Num(v) => Values::Num(v.into_iter().map(|x| x.or(Some(*value))).collect()),
                Values::Text(v) => {
                    // Mixed text/number cells: encode text first, then fill.
                    let encoded = ColumnData::Text(v).to_numeric();
                    Values::Num(encoded.into_iter().map(|x| x.or(Some(*value))).collect())
                }
            },
            Expr::Replace { source, mapping } => Values::Num(replace(self.eval(source)?, mapping)),
            Expr::Where {
                source,
                condition,
                fallback,
            } => {
                let src = self.eval(source)?.numbers();
                let cond = self.eval(condition)?.numbers();
                let fb = match fallback {
                    Some(f) => self.eval(f)?.numbers(),
                    None => vec![None; self.rows],
                };
                Values::Num(
                    (0..self.rows)
                        .map(|r| match cond[r] {
                            Some(c) if c != 0.0 => src[r],
                            _ => fb[r],
                        })
                        .collect(),
                )
            }
            Expr::GroupTransform { keys, target, agg } => {
                // Counting looks only at presence, so text targets count too.
                let presence = *agg == Agg::Count;
                Values::Num(self.group_apply(keys, target, presence, |vals| aggregate(*agg, vals))?)
            }
            Expr::GroupVariance { keys, target } => {
                Values::Num(self.group_apply(keys, target, false, population_variance)?)
            }
        })
    }

    /// Applies `f` to the non-missing target values of each key group and
    /// broadcasts the result back to the group's rows.
    fn group_apply(
        &self,
        keys: &[String],
        target: &str,
        presence: bool,
        f: impl Fn(&[f64]) -> Option<f64>,
    ) -> Result<Vec<Option<f64>>, EvalError> {
        let key_cols: Vec<&ColumnData> = keys
            .iter()
            .map(|k| self.column(k))
            .collect::<Result<_, _>>()?;
        let column = self.column(target)?;
        let target: Vec<Option<f64>> = if presence {
            (0..self.rows)
                .map(|r| (!column.is_missing(r)).then_some(1.0))
                .collect()
        } else {
            Values::from_column(column).numbers()
        };
        let mut group_of: Vec<usize> = Vec::with_capacity(self.rows);
        let mut ids: HashMap<Vec<GroupKey>, usize> = HashMap::new();
        let mut members: Vec<Vec<f64>> = Vec::new();
        for (row, value) in target.iter().enumerate().take(self.rows) {
            let key: Vec<GroupKey> = key_cols.iter().map(|c| GroupKey::of(c, row)).collect();
            let next = ids.len();
            let id = *ids.entry(key).or_insert(next);
            if id == members.len() {
                members.push(Vec::new());
            }
            if let Some(v) = *value {
                members[id].push(v);
            }
            group_of.push(id);
        }
        let results: Vec<Option<f64>> = members
            .iter()
            .map(|vals| f(vals).and_then(finite))
            .collect();
        Ok(group_of.into_iter().map(|g| results[g]).collect())
    }
}

/// Hashable group key. Missing keys form one group; `-0.0` and `0.0` match.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum GroupKey {
    Missing,
    Num(u64),
    Text(String),
}

impl GroupKey {
    fn of(column: &ColumnData, row: usize) -> GroupKey {
        match column {
            ColumnData::Numeric(v) => match v[row] {
                Some(0.0) => GroupKey::Num(0.0f64.to_bits()),
                Some(x) => GroupKey::Num(x.to_bits()),
                None => GroupKey::Missing,
            },
            ColumnData::Text(v) => match &v[row] {
                Some(s) => GroupKey::Text(s.clone()),
                None => GroupKey::Missing,
            },
        }
    }
}

fn apply_bin(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

fn apply_unary(func: UnaryFn, x: f64) -> f64 {
    match func {
        UnaryFn::Log => x.ln(),
        UnaryFn::Exp => x.exp(),
        UnaryFn::Abs => x.abs(),
        UnaryFn::Sqrt => x.sqrt(),
    }
}

fn cmp_holds(op: CmpOp, ord: std::cmp::Ordering) -> bool {
    use std::cmp::Ordering::*;
    match op {
        CmpOp::Eq => ord == Equal,
        CmpOp::Ne => ord != Equal,
        CmpOp::Lt => ord == Less,
        CmpOp::Le => ord != Greater,
        CmpOp::Gt => ord == Greater,
        CmpOp::Ge => ord != Less,
    }
}

fn compare(op: CmpOp, a: &Values, b: &Values) -> Vec<Option<f64>> {
    let flag = |holds: bool| Some(if holds { 1.0 } else { 0.0 });
    match (a, b) {
        (Values::Num(a), Values::Num(b)) => a
            .iter()
            .zip(b)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => x.partial_cmp(y).and_then(|o| flag(cmp_holds(op, o))),
                _ => None,
            })
            .collect(),
        (Values::Text(a), Values::Text(b)) => a
            .iter()
            .zip(b)
            .map(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => flag(cmp_holds(op, x.cmp(y))),
                _ => None,
            })
            .collect(),
        (Values::Num(n), Values::Text(t)) | (Values::Text(t), Values::Num(n)) => n
            .iter()
            .zip(t)
            .map(|(x, y)| match (x, y, op) {
                (Some(_), Some(_), CmpOp::Eq) => flag(false),
                (Some(_), Some(_), CmpOp::Ne) => flag(true),
                _ => None,
            })
            .collect(),
    }
}

fn replace(values: Values, mapping: &[(Literal, f64)]) -> Vec<Option<f64>> {
    match values {
        Values::Text(v) => v
            .into_iter()
            .map(|cell| {
                let cell = cell?;
                mapping.iter().find_map(|(k, to)| match k {
                    Literal::Text(s) if *s == cell => Some(*to),
                    _ => None,
                })
            })
            .collect(),
        Values::Num(v) => v
            .into_iter()
            .map(|cell| {
                let x = cell?;
                let mapped = mapping.iter().find_map(|(k, to)| match k {
                    Literal::Number(n) if *n == x => Some(*to),
                    _ => None,
                });
                Some(mapped.unwrap_or(x))
            })
            .collect(),
    }
}

fn aggregate(agg: Agg, vals: &[f64]) -> Option<f64> {
    match agg {
        Agg::Sum => Some(vals.iter().sum()),
        Agg::Count => Some(vals.len() as f64),
        Agg::Mean => (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
        Agg::Min => vals.iter().copied().reduce(f64::min),
        Agg::Max => vals.iter().copied().reduce(f64::max),
    }
}

fn population_variance(vals: &[f64]) -> Option<f64> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    Some(vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}
