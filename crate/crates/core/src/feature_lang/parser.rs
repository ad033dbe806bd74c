use std::collections::HashSet;

use super::ast::{Agg, BinOp, CmpOp, Expr, FeatureDef, FeatureProgram, Literal, UnaryFn};
use super::lexer::{tokenize, Tok};
use super::source::statements;
use super::{ParseError, MAX_EXPR_DEPTH, MAX_FEATURES};
use crate::task::TaskSpec;

const STATEMENT_KEYWORDS: &[&str] = &[
    "import", "from", "for", "while", "def", "class", "with", "if", "try", "lambda", "exec",
    "eval", "del", "global", "return", "print",
];

/// Parses generated feature code against the columns of `task`.
///
/// Each statement must be `df['NAME'] = EXPR`. A feature may read any
/// non-label task column or a feature defined on an earlier line.
pub fn parse_program(code: &str, task: &TaskSpec) -> Result<FeatureProgram, ParseError> {
    let stmts = statements(code);
    if stmts.is_empty() {
        return Err(ParseError::Empty);
    }
    let existing: HashSet<&str> = task.columns.iter().map(|c| c.name.as_str()).collect();
    let mut readable: HashSet<String> = task.feature_names().into_iter().collect();
    let mut features: Vec<FeatureDef> = Vec::new();

    for stmt in stmts {
        let line = stmt.line;
        if let Some(keyword) = leading_keyword(&stmt.text) {
            return Err(ParseError::Unsupported {
                construct: keyword,
                line,
            });
        }
        let toks = tokenize(&stmt.text).map_err(|message| ParseError::Syntax { message, line })?;
        let mut p = Parser {
            toks: &toks,
            pos: 0,
            line,
            nesting: 0,
        };
        let name = p.assignment_target()?;
        if existing.contains(name.as_str()) || features.iter().any(|f| f.name == name) {
            return Err(ParseError::DuplicateFeature { name, line });
        }
        let expr = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(p.unexpected(tok));
        }
        if expr.depth() > MAX_EXPR_DEPTH {
            return Err(ParseError::TooDeep { line });
        }
        for column in expr.columns() {
            if column == task.label_column {
                return Err(ParseError::LabelReference {
                    name: column.to_string(),
                    line,
                });
            }
            if !readable.contains(column) {
                return Err(ParseError::UnknownColumn {
                    name: column.to_string(),
                    line,
                });
            }
        }
        readable.insert(name.clone());
        features.push(FeatureDef {
            name,
            expr,
            source_line: stmt.text,
        });
        if features.len() > MAX_FEATURES {
            return Err(ParseError::TooManyFeatures(features.len()));
        }
    }
    Ok(FeatureProgram { features })
}

/// Parses a single expression (no assignment, no column checks).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(text).map_err(|message| ParseError::Syntax { message, line: 1 })?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        line: 1,
        nesting: 0,
    };
    let expr = p.expr()?;
    match p.peek() {
        Some(tok) => Err(p.unexpected(tok)),
        None => Ok(expr),
    }
}

fn leading_keyword(text: &str) -> Option<String> {
    let first: String = text
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    STATEMENT_KEYWORDS
        .contains(&first.as_str())
        .then_some(first)
}

/// Body of `transform(lambda x: ...)` before it is matched to a known form.
#[derive(Debug, Clone, PartialEq)]
enum LambdaExpr {
    Var,
    Num(f64),
    Binary(BinOp, Box<LambdaExpr>, Box<LambdaExpr>),
    Pow(Box<LambdaExpr>, f64),
    Method(Box<LambdaExpr>, String),
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
    nesting: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, offset: usize) -> Option<&'a Tok> {
        self.toks.get(self.pos + offset)
    }

    fn bump(&mut self) -> Option<&'a Tok> {
        let tok = self.toks.get(self.pos);
        self.pos += 1;
        tok
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            message: message.into(),
            line: self.line,
        }
    }

    fn unsupported(&self, construct: impl Into<String>) -> ParseError {
        ParseError::Unsupported {
            construct: construct.into(),
            line: self.line,
        }
    }

    fn unexpected(&self, tok: &Tok) -> ParseError {
        match tok {
            Tok::Other(c) => self.unsupported(format!("operator `{c}`")),
            other => self.syntax(format!("unexpected {}", other.describe())),
        }
    }

    fn expect(&mut self, tok: &Tok) -> Result<(), ParseError> {
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.syntax(format!("expected {tok:?}, found end of statement"))),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.bump() {
            Some(Tok::Str(s)) => Ok(s.clone()),
            Some(t) => Err(self.syntax(format!("expected a quoted name, found {}", t.describe()))),
            None => Err(self.syntax("expected a quoted name")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.bump() {
            Some(Tok::Ident(s)) => Ok(s.clone()),
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.syntax("expected a name")),
        }
    }

    fn assignment_target(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(id)) if id == "df" => {}
            Some(Tok::Ident(id)) => {
                return Err(self.unsupported(format!("statement starting with `{id}`")))
            }
            _ => return Err(self.unsupported("statement that is not a `df[...]` assignment")),
        }
        self.pos += 1;
        self.expect(&Tok::LBracket)?;
        let name = self.string()?;
        self.expect(&Tok::RBracket)?;
        if !self.eat(&Tok::Assign) {
            return Err(self.unsupported("statement that is not a `df[...]` assignment"));
        }
        if name.trim().is_empty() {
            return Err(self.syntax("feature name is empty"));
        }
        Ok(name)
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.nesting += 1;
        if self.nesting > 2 * MAX_EXPR_DEPTH {
            return Err(ParseError::TooDeep { line: self.line });
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let lhs = self.additive()?;
        let result = match self.cmp_op() {
            Some(op) => {
                self.pos += 1;
                let rhs = self.additive()?;
                if self.cmp_op().is_some() {
                    return Err(self.unsupported("chained comparison"));
                }
                Expr::Compare {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                }
            }
            None => lhs,
        };
        self.nesting -= 1;
        Ok(result)
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek()? {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        })
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let result = if self.eat(&Tok::Minus) {
            match self.unary()? {
                Expr::Const(Literal::Number(v)) => Expr::Const(Literal::Number(-v)),
                other => Expr::Binary {
                    op: BinOp::Sub,
                    lhs: Box::new(Expr::Const(Literal::Number(0.0))),
                    rhs: Box::new(other),
                },
            }
        } else if self.eat(&Tok::Plus) {
            self.unary()?
        } else {
            self.power()?
        };
        self.nesting -= 1;
        Ok(result)
    }

    /// `base ** n` is desugared: small positive integer exponents become
    /// repeated multiplication, `0.5` becomes a square root.
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if !self.eat(&Tok::Pow) {
            return Ok(base);
        }
        let exponent = match self.unary()? {
            Expr::Const(Literal::Number(v)) => v,
            _ => return Err(self.unsupported("non-constant exponent")),
        };
        desugar_power(base, exponent)
            .ok_or_else(|| self.unsupported(format!("exponent {exponent}")))
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut expr = self.primary()?;
        while self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
            let method = self.ident()?;
            self.expect(&Tok::LParen)?;
            expr = self.method_call(expr, &method)?;
        }
        if self.peek() == Some(&Tok::LBracket) {
            return Err(self.unsupported("indexing an expression"));
        }
        Ok(expr)
    }

    fn method_call(&mut self, receiver: Expr, method: &str) -> Result<Expr, ParseError> {
        let source = Box::new(receiver);
        let expr = match method {
            "where" => {
                let condition = Box::new(self.expr()?);
                let fallback = if self.eat(&Tok::Comma) {
                    self.skip_keyword("other");
                    self.optional_value()?.map(Box::new)
                } else {
                    None
                };
                Expr::Where {
                    source,
                    condition,
                    fallback,
                }
            }
            "fillna" => {
                self.skip_keyword("value");
                let value = self.number_arg()?;
                Expr::FillNa { source, value }
            }
            "replace" => {
                let mapping = self.mapping()?;
                Expr::Replace { source, mapping }
            }
            "abs" => Expr::Unary {
                func: UnaryFn::Abs,
                arg: source,
            },
            "astype" => {
                let target = match self.bump() {
                    Some(Tok::Ident(s)) | Some(Tok::Str(s)) => s.clone(),
                    _ => return Err(self.syntax("expected a type name in astype()")),
                };
                if !matches!(
                    target.as_str(),
                    "int" | "float" | "int32" | "int64" | "float32" | "float64"
                ) {
                    return Err(self.unsupported(format!("astype({target})")));
                }
                *source
            }
            other => return Err(self.unsupported(format!("method `.{other}()`"))),
        };
        self.expect(&Tok::RParen)?;
        Ok(expr)
    }

    fn skip_keyword(&mut self, name: &str) {
        if matches!(self.peek(), Some(Tok::Ident(id)) if id == name)
            && self.peek_at(1) == Some(&Tok::Assign)
        {
            self.pos += 2;
        }
    }

    /// An expression, or `np.nan` / `None` meaning "missing".
    fn optional_value(&mut self) -> Result<Option<Expr>, ParseError> {
        if self.is_np_nan() {
            self.pos += 3;
            return Ok(None);
        }
        if matches!(self.peek(), Some(Tok::Ident(id)) if id == "None") {
            self.pos += 1;
            return Ok(None);
        }
        self.expr().map(Some)
    }

    fn is_np_nan(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(np)) if np == "np")
            && self.peek_at(1) == Some(&Tok::Dot)
            && matches!(self.peek_at(2), Some(Tok::Ident(n)) if n == "nan" || n == "NaN")
    }

    fn number_arg(&mut self) -> Result<f64, ParseError> {
        match self.unary()? {
            Expr::Const(Literal::Number(v)) => Ok(v),
            _ => Err(self.unsupported("non-constant argument")),
        }
    }

    fn literal_key(&mut self) -> Result<Literal, ParseError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Literal::Text(s))
            }
            _ => self.number_arg().map(Literal::Number),
        }
    }

    fn mapping(&mut self) -> Result<Vec<(Literal, f64)>, ParseError> {
        self.expect(&Tok::LBrace)?;
        let mut pairs: Vec<(Literal, f64)> = Vec::new();
        while !self.eat(&Tok::RBrace) {
            let key = self.literal_key()?;
            self.expect(&Tok::Colon)?;
            let value = match self.peek() {
                Some(Tok::Str(_)) => return Err(self.unsupported("replace() to a text value")),
                _ => self.number_arg()?,
            };
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(self.syntax(format!("duplicate replace() key {key}")));
            }
            pairs.push((key, value));
            if !self.eat(&Tok::Comma) {
                self.expect(&Tok::RBrace)?;
                break;
            }
        }
        if pairs.is_empty() {
            return Err(self.syntax("empty replace() mapping"));
        }
        Ok(pairs)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = match self.bump() {
            Some(t) => t,
            None => return Err(self.syntax("unexpected end of statement")),
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Const(Literal::Number(*v))),
            Tok::Str(s) => Ok(Expr::Const(Literal::Text(s.clone()))),
            Tok::LParen => {
                let inner = self.expr()?;
                if self.peek() == Some(&Tok::Comma) {
                    return Err(self.unsupported("tuple"));
                }
                self.expect(&Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(id) => match id.as_str() {
                "df" => self.dataframe_access(),
                "np" | "numpy" => self.numpy_call(),
                "abs" => {
                    self.expect(&Tok::LParen)?;
                    let arg = self.expr()?;
                    self.expect(&Tok::RParen)?;
                    Ok(Expr::Unary {
                        func: UnaryFn::Abs,
                        arg: Box::new(arg),
                    })
                }
                "True" => Ok(Expr::Const(Literal::Number(1.0))),
                "False" => Ok(Expr::Const(Literal::Number(0.0))),
                "lambda" => Err(self.unsupported("lambda outside groupby().transform()")),
                other => {
                    if self.peek() == Some(&Tok::LParen) {
                        Err(self.unsupported(format!("call to `{other}`")))
                    } else {
                        Err(self.unsupported(format!("name `{other}`")))
                    }
                }
            },
            other => Err(self.unexpected(other)),
        }
    }

    fn dataframe_access(&mut self) -> Result<Expr, ParseError> {
        match self.bump() {
            Some(Tok::LBracket) => {
                let name = self.string()?;
                self.expect(&Tok::RBracket)?;
                Ok(Expr::Column(name))
            }
            Some(Tok::Dot) => {
                let method = self.ident()?;
                if method != "groupby" {
                    return Err(self.unsupported(format!("df.{method}")));
                }
                self.group_transform()
            }
            Some(t) => Err(self.unexpected(t)),
            None => Err(self.unsupported("bare `df`")),
        }
    }

    fn group_transform(&mut self) -> Result<Expr, ParseError> {
        self.expect(&Tok::LParen)?;
        let keys = if self.eat(&Tok::LBracket) {
            let mut keys = vec![self.string()?];
            while self.eat(&Tok::Comma) {
                if self.peek() == Some(&Tok::RBracket) {
                    break;
                }
                keys.push(self.string()?);
            }
            self.expect(&Tok::RBracket)?;
            keys
        } else {
            vec![self.string()?]
        };
        self.expect(&Tok::RParen)?;
        self.expect(&Tok::LBracket)?;
        let target = self.string()?;
        self.expect(&Tok::RBracket)?;
        self.expect(&Tok::Dot)?;
        let method = self.ident()?;
        if method != "transform" {
            return Err(self.unsupported(format!("groupby(...).{method}")));
        }
        self.expect(&Tok::LParen)?;
        let expr = match self.peek() {
            Some(Tok::Str(name)) => {
                let agg = Agg::from_name(name)
                    .ok_or_else(|| self.unsupported(format!("transform('{name}')")))?;
                self.pos += 1;
                Expr::GroupTransform { keys, target, agg }
            }
            Some(Tok::Ident(id)) if id == "lambda" => {
                self.pos += 1;
                let var = self.ident()?;
                self.expect(&Tok::Colon)?;
                let body = self.lambda_additive(&var)?;
                match classify_lambda(&body) {
                    Some(LambdaForm::Agg(agg)) => Expr::GroupTransform { keys, target, agg },
                    Some(LambdaForm::Variance) => Expr::GroupVariance { keys, target },
                    None => return Err(self.unsupported("lambda body")),
                }
            }
            _ => return Err(self.unsupported("transform argument")),
        };
        self.expect(&Tok::RParen)?;
        Ok(expr)
    }

    fn numpy_call(&mut self) -> Result<Expr, ParseError> {
        self.expect(&Tok::Dot)?;
        let func = self.ident()?;
        self.expect(&Tok::LParen)?;
        let expr = if func == "where" {
            let condition = self.expr()?;
            self.expect(&Tok::Comma)?;
            let source = self.expr()?;
            self.expect(&Tok::Comma)?;
            let fallback = self.optional_value()?;
            Expr::Where {
                source: Box::new(source),
                condition: Box::new(condition),
                fallback: fallback.map(Box::new),
            }
        } else {
            let func =
                UnaryFn::from_name(&func).ok_or_else(|| self.unsupported(format!("np.{func}")))?;
            Expr::Unary {
                func,
                arg: Box::new(self.expr()?),
            }
        };
        self.expect(&Tok::RParen)?;
        Ok(expr)
    }

    fn lambda_additive(&mut self, var: &str) -> Result<LambdaExpr, ParseError> {
        self.enter()?;
        let mut lhs = self.lambda_multiplicative(var)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.lambda_multiplicative(var)?;
            lhs = LambdaExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn lambda_multiplicative(&mut self, var: &str) -> Result<LambdaExpr, ParseError> {
        let mut lhs = self.lambda_power(var)?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.lambda_power(var)?;
            lhs = LambdaExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn lambda_power(&mut self, var: &str) -> Result<LambdaExpr, ParseError> {
        let base = self.lambda_postfix(var)?;
        if self.eat(&Tok::Pow) {
            match self.bump() {
                Some(Tok::Num(n)) => return Ok(LambdaExpr::Pow(Box::new(base), *n)),
                _ => return Err(self.unsupported("lambda exponent")),
            }
        }
        Ok(base)
    }

    fn lambda_postfix(&mut self, var: &str) -> Result<LambdaExpr, ParseError> {
        let mut expr = match self.bump() {
            Some(Tok::Ident(id)) if id == var => LambdaExpr::Var,
            Some(Tok::Num(v)) => LambdaExpr::Num(*v),
            Some(Tok::LParen) => {
                let inner = self.lambda_additive(var)?;
                self.expect(&Tok::RParen)?;
                inner
            }
            Some(t) => return Err(self.unexpected(t)),
            None => return Err(self.syntax("unexpected end of lambda")),
        };
        while self.eat(&Tok::Dot) {
            let method = self.ident()?;
            self.expect(&Tok::LParen)?;
            self.expect(&Tok::RParen)?;
            expr = LambdaExpr::Method(Box::new(expr), method);
        }
        Ok(expr)
    }
}

enum LambdaForm {
    Agg(Agg),
    Variance,
}

/// Recognizes `x.<agg>()` and the mean-squared-deviation idiom
/// `((x - x.mean())**2).mean()` (also written with `*`).
fn classify_lambda(body: &LambdaExpr) -> Option<LambdaForm> {
    let LambdaExpr::Method(inner, method) = body else {
        return None;
    };
    if **inner == LambdaExpr::Var {
        return Agg::from_name(method).map(LambdaForm::Agg);
    }
    if method != "mean" {
        return None;
    }
    let deviation = LambdaExpr::Binary(
        BinOp::Sub,
        Box::new(LambdaExpr::Var),
        Box::new(LambdaExpr::Method(Box::new(LambdaExpr::Var), "mean".into())),
    );
    let squared = match &**inner {
        LambdaExpr::Pow(base, n) => **base == deviation && *n == 2.0,
        LambdaExpr::Binary(BinOp::Mul, a, b) => **a == deviation && **b == deviation,
        _ => false,
    };
    squared.then_some(LambdaForm::Variance)
}

fn desugar_power(base: Expr, exponent: f64) -> Option<Expr> {
    if exponent == 0.5 {
        return Some(Expr::Unary {
            func: UnaryFn::Sqrt,
            arg: Box::new(base),
        });
    }
    if exponent.fract() != 0.0 || !(1.0..=4.0).contains(&exponent) {
        return None;
    }
    let mut acc = base.clone();
    for _ in 1..exponent as usize {
        acc = Expr::Binary {
            op: BinOp::Mul,
            lhs: Box::new(acc),
            rhs: Box::new(base.clone()),
        };
    }
    Some(acc)
}
