//! A small, total, row-local expression language.
//!
//! Expressions reference columns of a single row and combine them with
//! arithmetic (`+ - *`, `safe_div`), comparisons, `and`/`or`/`not`,
//! `if … then … else …`, set membership (`x in ['a', 'b']`), `clamp`, `log1p`
//! and `is_missing`. There are no loops, no aggregates across rows and no
//! side effects. Evaluation never fails: `safe_div` yields 0 on a zero
//! denominator and missing inputs propagate to a missing result.
//!
//! ```
//! use shiftseg::dsl::{compile, ColumnTypes};
//! use shiftseg::table::Dtype;
//!
//! let mut types = ColumnTypes::new();
//! types.insert("AGE".into(), Dtype::Numeric);
//! types.insert("PAYER_NAME".into(), Dtype::Categorical);
//! let e = compile("if AGE > 59 and PAYER_NAME == 'Medicare' then 1 else 0", &types, None).unwrap();
//! assert_eq!(e.columns().len(), 2);
//! ```

mod parser;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub use parser::{ArithOp, CmpOp, Expr, Literal};

use crate::table::{ColumnData, Dtype, Table, Value};

pub type ColumnTypes = BTreeMap<String, Dtype>;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DslError {
    #[error("parse error at offset {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("column {0:?} is not among the allowed source columns")]
    ForbiddenColumn(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ty {
    Num,
    Bool,
    Str,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Num => "numeric",
            Ty::Bool => "boolean",
            Ty::Str => "categorical",
        })
    }
}

fn dtype_ty(d: Dtype) -> Ty {
    match d {
        Dtype::Numeric => Ty::Num,
        Dtype::Boolean => Ty::Bool,
        Dtype::Categorical | Dtype::Text => Ty::Str,
    }
}

/// Reserved words and built-in function names.
pub fn is_keyword(word: &str) -> bool {
    parser::KEYWORDS.contains(&word) || ["safe_div", "clamp", "log1p", "is_missing"].contains(&word)
}

pub fn column_types(table: &Table) -> ColumnTypes {
    table
        .schema()
        .iter()
        .map(|c| (c.name.clone(), c.dtype))
        .collect()
}

/// A parsed and type-checked expression.
#[derive(Clone, Debug, PartialEq)]
pub struct DslExpression {
    text: String,
    ast: Expr,
    ty: Ty,
    columns: BTreeSet<String>,
}

/// Parses and type-checks `text`. When `allowed` is given, every referenced
/// column must belong to it.
pub fn compile(
    text: &str,
    types: &ColumnTypes,
    allowed: Option<&BTreeSet<String>>,
) -> Result<DslExpression, DslError> {
    let ast = parser::Parser::parse(text)?;
    let mut columns = BTreeSet::new();
    let ty = check(&ast, types, &mut columns)?;
    if let Some(allowed) = allowed {
        if let Some(bad) = columns.iter().find(|c| !allowed.contains(*c)) {
            return Err(DslError::ForbiddenColumn(bad.clone()));
        }
    }
    Ok(DslExpression {
        text: text.to_string(),
        ast,
        ty,
        columns,
    })
}

fn check(e: &Expr, types: &ColumnTypes, cols: &mut BTreeSet<String>) -> Result<Ty, DslError> {
    let mut sub = |e: &Expr| check(e, types, cols);
    let ty = match e {
        Expr::Num(_) => Ty::Num,
        Expr::Str(_) => Ty::Str,
        Expr::Bool(_) => Ty::Bool,
        Expr::Col(name) | Expr::IsMissing(name) => {
            let d = types
                .get(name)
                .ok_or_else(|| DslError::UnknownColumn(name.clone()))?;
            cols.insert(name.clone());
            if matches!(e, Expr::IsMissing(_)) {
                Ty::Bool
            } else {
                dtype_ty(*d)
            }
        }
        Expr::Neg(a) | Expr::Log1p(a) => expect(sub(a)?, Ty::Num, "arithmetic operand")?,
        Expr::Arith(_, a, b) | Expr::SafeDiv(a, b) => {
            let (ta, tb) = (sub(a)?, sub(b)?);
            if ta != Ty::Num || tb != Ty::Num {
                return Err(DslError::Type(format!(
                    "arithmetic needs numeric operands, got {ta} and {tb}"
                )));
            }
            Ty::Num
        }
        Expr::Clamp(x, lo, hi) => {
            for a in [x, lo, hi] {
                expect(sub(a)?, Ty::Num, "clamp argument")?;
            }
            Ty::Num
        }
        Expr::Cmp(op, a, b) => {
            let (ta, tb) = (sub(a)?, sub(b)?);
            if ta != tb {
                return Err(DslError::Type(format!("cannot compare {ta} with {tb}")));
            }
            if ta != Ty::Num && !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(DslError::Type(format!("ordering comparison on {ta} values")));
            }
            Ty::Bool
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            expect(sub(a)?, Ty::Bool, "logical operand")?;
            expect(sub(b)?, Ty::Bool, "logical operand")?;
            Ty::Bool
        }
        Expr::Not(a) => expect(sub(a)?, Ty::Bool, "logical operand")?,
        Expr::If(c, a, b) => {
            expect(sub(c)?, Ty::Bool, "if condition")?;
            let (ta, tb) = (sub(a)?, sub(b)?);
            if ta != tb {
                return Err(DslError::Type(format!("if branches differ: {ta} vs {tb}")));
            }
            ta
        }
        Expr::In(x, items) => {
            let tx = sub(x)?;
            for it in items {
                let ti = match it {
                    Literal::Num(_) => Ty::Num,
                    Literal::Str(_) => Ty::Str,
                };
                if ti != tx {
                    return Err(DslError::Type(format!("`in` set of {ti} for {tx} value")));
                }
            }
            if tx == Ty::Bool {
                return Err(DslError::Type("`in` needs numeric or categorical value".into()));
            }
            Ty::Bool
        }
    };
    Ok(ty)
}

fn expect(got: Ty, want: Ty, what: &str) -> Result<Ty, DslError> {
    if got == want {
        Ok(got)
    } else {
        Err(DslError::Type(format!("{what} must be {want}, got {got}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Val<'a> {
    Num(f64),
    Str(&'a str),
    Bool(bool),
    Missing,
}

impl DslExpression {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn result_type(&self) -> Ty {
        self.ty
    }

    pub fn columns(&self) -> &BTreeSet<String> {
        &self.columns
    }

    /// Resolves column references against `table` for repeated evaluation.
    pub fn bind<'t>(&'t self, table: &'t Table) -> Result<BoundExpr<'t>, DslError> {
        let mut cols = HashMap::new();
        for name in &self.columns {
            let idx = table
                .column_index(name)
                .ok_or_else(|| DslError::UnknownColumn(name.clone()))?;
            let want = self.declared_type(name, table);
            if want != dtype_ty(table.schema()[idx].dtype) {
                return Err(DslError::Type(format!("column {name:?} changed type")));
            }
            cols.insert(name.as_str(), table.column_at(idx));
        }
        Ok(BoundExpr { expr: self, cols })
    }

    fn declared_type(&self, name: &str, table: &Table) -> Ty {
        // types were checked at compile time against a schema with the same names
        dtype_ty(table.column_schema(name).unwrap().dtype)
    }

    /// Numeric value per row; booleans map to 1/0, missing to `None`.
    pub fn eval_numeric(&self, table: &Table) -> Result<Vec<Option<f64>>, DslError> {
        let b = self.bind(table)?;
        Ok((0..table.n_rows()).map(|r| b.numeric(r)).collect())
    }

    /// Predicate value per row; missing counts as false.
    pub fn eval_mask(&self, table: &Table) -> Result<Vec<bool>, DslError> {
        if self.ty != Ty::Bool {
            return Err(DslError::Type(format!("predicate must be boolean, got {}", self.ty)));
        }
        let b = self.bind(table)?;
        Ok((0..table.n_rows()).map(|r| b.predicate(r)).collect())
    }
}

pub struct BoundExpr<'t> {
    expr: &'t DslExpression,
    cols: HashMap<&'t str, &'t ColumnData>,
}

impl<'t> BoundExpr<'t> {
    pub fn numeric(&self, row: usize) -> Option<f64> {
        match self.eval(&self.expr.ast, row) {
            Val::Num(x) => Some(x),
            Val::Bool(b) => Some(if b { 1.0 } else { 0.0 }),
            Val::Str(_) | Val::Missing => None,
        }
    }

    pub fn predicate(&self, row: usize) -> bool {
        matches!(self.eval(&self.expr.ast, row), Val::Bool(true))
    }

    fn eval(&self, e: &'t Expr, row: usize) -> Val<'t> {
        match e {
            Expr::Num(v) => Val::Num(*v),
            Expr::Str(s) => Val::Str(s),
            Expr::Bool(b) => Val::Bool(*b),
            Expr::Col(name) => match self.cols[name.as_str()].value(row) {
                Value::Missing => Val::Missing,
                Value::Num(x) => Val::Num(x),
                Value::Str(s) => Val::Str(s),
                Value::Bool(b) => Val::Bool(b),
            },
            Expr::IsMissing(name) => Val::Bool(self.cols[name.as_str()].is_missing(row)),
            Expr::Neg(a) => num1(self.eval(a, row), |x| -x),
            Expr::Log1p(a) => num1(self.eval(a, row), |x| x.signum() * x.abs().ln_1p()),
            Expr::Arith(op, a, b) => num2(self.eval(a, row), self.eval(b, row), |x, y| match op {
                ArithOp::Add => x + y,
                ArithOp::Sub => x - y,
                ArithOp::Mul => x * y,
            }),
            Expr::SafeDiv(a, b) => num2(self.eval(a, row), self.eval(b, row), |x, y| {
                if y == 0.0 {
                    0.0
                } else {
                    x / y
                }
            }),
            Expr::Clamp(x, lo, hi) => {
                match (self.eval(x, row), self.eval(lo, row), self.eval(hi, row)) {
                    (Val::Num(x), Val::Num(lo), Val::Num(hi)) => Val::Num(x.max(lo).min(hi)),
                    _ => Val::Missing,
                }
            }
            Expr::Cmp(op, a, b) => match (self.eval(a, row), self.eval(b, row)) {
                (Val::Num(x), Val::Num(y)) => Val::Bool(match op {
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                }),
                (Val::Str(x), Val::Str(y)) => Val::Bool((x == y) == (*op == CmpOp::Eq)),
                (Val::Bool(x), Val::Bool(y)) => Val::Bool((x == y) == (*op == CmpOp::Eq)),
                _ => Val::Missing,
            },
            Expr::And(a, b) => match (self.eval(a, row), self.eval(b, row)) {
                (Val::Bool(false), _) | (_, Val::Bool(false)) => Val::Bool(false),
                (Val::Bool(true), Val::Bool(true)) => Val::Bool(true),
                _ => Val::Missing,
            },
            Expr::Or(a, b) => match (self.eval(a, row), self.eval(b, row)) {
                (Val::Bool(true), _) | (_, Val::Bool(true)) => Val::Bool(true),
                (Val::Bool(false), Val::Bool(false)) => Val::Bool(false),
                _ => Val::Missing,
            },
            Expr::Not(a) => match self.eval(a, row) {
                Val::Bool(b) => Val::Bool(!b),
                _ => Val::Missing,
            },
            Expr::If(c, a, b) => match self.eval(c, row) {
                Val::Bool(true) => self.eval(a, row),
                Val::Bool(false) => self.eval(b, row),
                _ => Val::Missing,
            },
            Expr::In(x, items) => match self.eval(x, row) {
                Val::Num(v) => Val::Bool(items.contains(&Literal::Num(v))),
                Val::Str(s) => Val::Bool(
                    items
                        .iter()
                        .any(|i| matches!(i, Literal::Str(t) if t == s)),
                ),
                _ => Val::Missing,
            },
        }
    }
}

fn finite(x: f64) -> Val<'static> {
    if x.is_finite() {
        Val::Num(x)
    } else {
        Val::Missing
    }
}

fn num1<'a>(a: Val<'a>, f: impl Fn(f64) -> f64) -> Val<'a> {
    match a {
        Val::Num(x) => finite(f(x)),
        _ => Val::Missing,
    }
}

fn num2<'a>(a: Val<'a>, b: Val<'a>, f: impl Fn(f64, f64) -> f64) -> Val<'a> {
    match (a, b) {
        (Val::Num(x), Val::Num(y)) => finite(f(x, y)),
        _ => Val::Missing,
    }
}

/// Quotes a string as a DSL literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{ColumnSchema, Role};

    fn table() -> Table {
        let schema = vec![
            ColumnSchema::new("id", Dtype::Text, Role::Key),
            ColumnSchema::new("AGE", Dtype::Numeric, Role::Feature),
            ColumnSchema::new("PAYER_NAME", Dtype::Categorical, Role::Feature),
            ColumnSchema::new("MARITAL", Dtype::Categorical, Role::Feature),
            ColumnSchema::new("TOTSLFY", Dtype::Numeric, Role::Feature),
            ColumnSchema::new("TOT_INCOME", Dtype::Numeric, Role::Feature),
            ColumnSchema::new("COST", Dtype::Numeric, Role::TargetMetric),
        ];
        Table::from_columns(
            schema,
            vec![
                ColumnData::Text((0..4).map(|i| Some(format!("k{i}"))).collect()),
                ColumnData::Numeric(vec![Some(65.0), Some(59.0), None, Some(80.0)]),
                ColumnData::Text(vec![
                    Some("Medicare".into()),
                    Some("Medicare".into()),
                    Some("Medicare".into()),
                    Some("Aetna".into()),
                ]),
                ColumnData::Text(vec![Some("M".into()), None, Some("D".into()), Some("S".into())]),
                ColumnData::Numeric(vec![Some(10.0), Some(5.0), Some(1.0), Some(3.0)]),
                ColumnData::Numeric(vec![Some(100.0), Some(0.0), Some(4.0), None]),
                ColumnData::Numeric(vec![Some(1.0); 4]),
            ],
        )
        .unwrap()
    }

    fn c(text: &str) -> Result<DslExpression, DslError> {
        compile(text, &column_types(&table()), None)
    }

    #[test]
    fn safe_div_ratio() {
        let e = c("safe_div(TOTSLFY, TOT_INCOME)").unwrap();
        assert_eq!(e.result_type(), Ty::Num);
        let v = e.eval_numeric(&table()).unwrap();
        assert_eq!(v, vec![Some(0.1), Some(0.0), Some(0.25), None]);
    }

    #[test]
    fn numeric_plus_categorical_is_type_error() {
        assert!(matches!(c("AGE + MARITAL"), Err(DslError::Type(_))));
        assert!(matches!(c("MARITAL < 'M'"), Err(DslError::Type(_))));
        assert!(matches!(c("AGE in ['a']"), Err(DslError::Type(_))));
        assert!(matches!(c("if AGE then 1 else 0"), Err(DslError::Type(_))));
        assert!(matches!(c("NOPE + 1"), Err(DslError::UnknownColumn(_))));
    }

    #[test]
    fn conditional_indicator_matches_hand_evaluation() {
        let e = c("if AGE > 59 and PAYER_NAME == 'Medicare' then 1 else 0").unwrap();
        let v = e.eval_numeric(&table()).unwrap();
        // row 0: 65/Medicare -> 1; row 1: 59 -> 0; row 2: missing age -> missing; row 3: Aetna -> 0
        assert_eq!(v, vec![Some(1.0), Some(0.0), None, Some(0.0)]);
    }

    #[test]
    fn kleene_logic_short_circuits_missing() {
        let e = c("AGE > 59 and PAYER_NAME == 'Aetna'").unwrap();
        let v = e.eval_numeric(&table()).unwrap();
        assert_eq!(v[2], Some(0.0));
        let e = c("AGE > 59 or PAYER_NAME == 'Medicare'").unwrap();
        assert_eq!(e.eval_numeric(&table()).unwrap()[2], Some(1.0));
    }

    #[test]
    fn membership_clamp_log1p_missing() {
        let t = table();
        let e = c("MARITAL in ['M', 'D']").unwrap();
        assert_eq!(e.eval_mask(&t).unwrap(), vec![true, false, true, false]);
        let e = c("clamp(TOTSLFY, 2, 4)").unwrap();
        assert_eq!(
            e.eval_numeric(&t).unwrap(),
            vec![Some(4.0), Some(4.0), Some(2.0), Some(3.0)]
        );
        let e = c("log1p(0 - TOTSLFY)").unwrap();
        assert!((e.eval_numeric(&t).unwrap()[0].unwrap() + 11f64.ln()).abs() < 1e-15);
        let e = c("is_missing(AGE) or is_missing(MARITAL)").unwrap();
        assert_eq!(e.eval_mask(&t).unwrap(), vec![false, true, true, false]);
    }

    #[test]
    fn constant_expression() {
        let e = c("1").unwrap();
        assert_eq!(e.eval_numeric(&table()).unwrap(), vec![Some(1.0); 4]);
    }

    #[test]
    fn allowed_columns_enforced() {
        let allowed: BTreeSet<String> = ["AGE".to_string()].into();
        let err = compile("AGE + TOTSLFY", &column_types(&table()), Some(&allowed)).unwrap_err();
        assert_eq!(err, DslError::ForbiddenColumn("TOTSLFY".into()));
    }

    #[test]
    fn quoting_roundtrips() {
        let s = "O'Brien \\ co";
        let text = format!("PAYER_NAME == {}", quote(s));
        let e = c(&text).unwrap();
        let Expr::Cmp(_, _, rhs) = e.ast() else { panic!() };
        assert_eq!(**rhs, Expr::Str(s.into()));
    }
}
