//! Design matrices built from covariate tables and a small formula language.
//!
//! A formula is a `+`-separated list of terms:
//!
//! - `col`: numeric columns pass through, categorical columns are dummy
//!   coded against their first (alphabetical) level;
//! - `poly(col, d)`: raw powers `col, col^2, ..., col^d`;
//! - `s(col)` / `s(col, df)`: cubic B-spline with `df` columns (default 10),
//!   interior knots at equally spaced quantiles of the column.
//!
//! An intercept is always the first column. `1` or an empty formula means
//! intercept only.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnData, CovariateTable, CovariateValue};
use crate::{Error, Result};

pub const DEFAULT_SPLINE_DF: usize = 10;
const SPLINE_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Column(String),
    Poly { column: String, degree: usize },
    Spline { column: String, df: usize },
}

impl Term {
    pub fn column(&self) -> &str {
        match self {
            Term::Column(c) | Term::Poly { column: c, .. } | Term::Spline { column: c, .. } => c,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Column(c) => write!(f, "{c}"),
            Term::Poly { column, degree } => write!(f, "poly({column}, {degree})"),
            Term::Spline { column, df } => write!(f, "s({column}, {df})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.terms.iter().map(Term::to_string).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl FromStr for Formula {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for raw in s.split('+') {
            let t = raw.trim();
            if t.is_empty() || t == "1" {
                continue;
            }
            terms.push(parse_term(t)?);
        }
        Ok(Formula { terms })
    }
}

fn parse_term(t: &str) -> Result<Term> {
    let bad = |msg: &str| Error::Config(format!("formula term '{t}': {msg}"));
    let Some(open) = t.find('(') else {
        if !t.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.') {
            return Err(bad("unexpected characters"));
        }
        return Ok(Term::Column(t.to_owned()));
    };
    if !t.ends_with(')') {
        return Err(bad("missing ')'"));
    }
    let func = t[..open].trim();
    let args: Vec<&str> = t[open + 1..t.len() - 1].split(',').map(str::trim).collect();
    let column = args.first().filter(|c| !c.is_empty()).ok_or_else(|| bad("missing column"))?;
    let int_arg = |i: usize| -> Result<Option<usize>> {
        args.get(i)
            .map(|a| a.parse::<usize>().map_err(|_| bad("expected a positive integer")))
            .transpose()
    };
    match func {
        "poly" => {
            let degree = int_arg(1)?.ok_or_else(|| bad("poly needs a degree"))?;
            if degree < 1 {
                return Err(bad("degree must be at least 1"));
            }
            Ok(Term::Poly { column: column.to_string(), degree })
        }
        "s" => {
            let df = int_arg(1)?.unwrap_or(DEFAULT_SPLINE_DF);
            if df < SPLINE_DEGREE {
                return Err(bad("spline needs at least 3 degrees of freedom"));
            }
            Ok(Term::Spline { column: column.to_string(), df })
        }
        _ => Err(bad("unknown function")),
    }
}

/// How one design column is computed from the source covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Basis {
    Intercept,
    Linear { column: String },
    Dummy { column: String, level: String },
    Power { column: String, power: usize },
    /// Basis function `index` of the cubic B-spline on `knots` (full knot
    /// vector including repeated boundary knots).
    BSpline { column: String, knots: Vec<f64>, index: usize },
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub labels: Vec<String>,
    pub basis: Vec<Basis>,
    pub formula: Formula,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Evaluate the training transforms at a new covariate point.
    ///
    /// `lookup` returns the value of a source column. Spline terms reject
    /// values outside their boundary knots.
    pub fn row_for<F>(&self, lookup: F) -> Result<Vec<f64>>
    where
        F: Fn(&str) -> Option<CovariateValue>,
    {
        let numeric = |col: &str| -> Result<f64> {
            match lookup(col) {
                Some(CovariateValue::Numeric(v)) => Ok(v),
                Some(CovariateValue::Level(_)) => Err(Error::Config(format!("column '{col}' expects a numeric value"))),
                None => Err(Error::Config(format!("no value supplied for column '{col}'"))),
            }
        };
        let mut row = Vec::with_capacity(self.basis.len());
        let mut spline_cache: Option<(String, Vec<f64>)> = None;
        for b in &self.basis {
            let v = match b {
                Basis::Intercept => 1.0,
                Basis::Linear { column } => numeric(column)?,
                Basis::Power { column, power } => numeric(column)?.powi(*power as i32),
                Basis::Dummy { column, level } => match lookup(column) {
                    Some(CovariateValue::Level(l)) => f64::from(u8::from(&l == level)),
                    _ => return Err(Error::Config(format!("column '{column}' expects a level"))),
                },
                Basis::BSpline { column, knots, index } => {
                    let x = numeric(column)?;
                    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
                    if x < lo || x > hi {
                        return Err(Error::Config(format!(
                            "value {x} for spline column '{column}' lies outside [{lo}, {hi}]"
                        )));
                    }
                    let cached = matches!(&spline_cache, Some((c, _)) if c == column);
                    if !cached {
                        spline_cache = Some((column.clone(), bspline_basis(knots, SPLINE_DEGREE, x)));
                    }
                    spline_cache.as_ref().unwrap().1[*index]
                }
            };
            row.push(v);
        }
        Ok(row)
    }
}

pub fn build_design_matrix(table: &CovariateTable, formula: &Formula) -> Result<DesignMatrix> {
    let d = table.rows();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; d]];
    let mut labels = vec!["(Intercept)".to_owned()];
    let mut basis = vec![Basis::Intercept];

    for term in &formula.terms {
        let name = term.column();
        let column = table
            .column(name)
            .ok_or_else(|| Error::Config(format!("formula references unknown column '{name}'")))?;
        match (&column.data, term) {
            (ColumnData::Categorical { levels, codes }, Term::Column(_)) => {
                for (li, level) in levels.iter().enumerate().skip(1) {
                    cols.push(codes.iter().map(|&c| f64::from(u8::from(c == li))).collect());
                    labels.push(format!("{name}{level}"));
                    basis.push(Basis::Dummy { column: name.to_owned(), level: level.clone() });
                }
            }
            (ColumnData::Categorical { .. }, _) => {
                return Err(Error::Config(format!("term '{term}' needs a numeric column")));
            }
            (ColumnData::Numeric(x), Term::Column(_)) => {
                cols.push(x.clone());
                labels.push(name.to_owned());
                basis.push(Basis::Linear { column: name.to_owned() });
            }
            (ColumnData::Numeric(x), Term::Poly { degree, .. }) => {
                for p in 1..=*degree {
                    cols.push(x.iter().map(|v| v.powi(p as i32)).collect());
                    labels.push(if p == 1 { name.to_owned() } else { format!("{name}^{p}") });
                    basis.push(Basis::Power { column: name.to_owned(), power: p });
                }
            }
            (ColumnData::Numeric(x), Term::Spline { df, .. }) => {
                let knots = spline_knots(x, *df);
                let evaluated: Vec<Vec<f64>> = x.iter().map(|&v| bspline_basis(&knots, SPLINE_DEGREE, v)).collect();
                // the first basis function is dropped; the intercept spans it
                for j in 1..=*df {
                    cols.push(evaluated.iter().map(|b| b[j]).collect());
                    labels.push(format!("s({name})_{j}"));
                    basis.push(Basis::BSpline { column: name.to_owned(), knots: knots.clone(), index: j });
                }
            }
        }
    }

    let p = cols.len();
    let matrix = DMatrix::from_fn(d, p, |i, j| cols[j][i]);
    let collinear = collinear_columns(&matrix);
    if !collinear.is_empty() {
        return Err(Error::RankDeficient {
            columns: collinear.into_iter().map(|j| labels[j].clone()).collect(),
        });
    }
    Ok(DesignMatrix { matrix, labels, basis, formula: formula.clone() })
}

/// Indices of columns that lie (numerically) in the span of earlier columns,
/// found by modified Gram–Schmidt with re-orthogonalization.
pub fn collinear_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let scale = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= proj * qi);
            }
        }
        let rem = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if scale == 0.0 || rem <= 1e-9 * scale {
            bad.push(j);
        } else {
            v.iter_mut().for_each(|vi| *vi /= rem);
            basis.push(v);
        }
    }
    bad
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn spline_knots(x: &[f64], df: usize) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let interior = df - SPLINE_DEGREE;
    let mut knots = vec![lo; SPLINE_DEGREE + 1];
    for i in 1..=interior {
        knots.push(quantile_sorted(&sorted, i as f64 / (interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(hi, SPLINE_DEGREE + 1));
    knots
}

/// All B-spline basis functions of the given degree at `x` (Cox–de Boor).
/// `x` must lie within the boundary knots; the right boundary is included.
pub fn bspline_basis(knots: &[f64], degree: usize, x: f64) -> Vec<f64> {
    let n_basis = knots.len() - degree - 1;
    let mut out = vec![0.0; n_basis];
    // knot span: largest i with knots[i] <= x < knots[i+1], clamped to the last non-empty span
    let last = n_basis - 1;
    let span = if x >= knots[last + 1] {
        (degree..=last).rev().find(|&i| knots[i] < knots[i + 1]).unwrap_or(last)
    } else {
        (degree..=last).find(|&i| x >= knots[i] && x < knots[i + 1]).unwrap_or(degree)
    };
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    for (r, v) in n.into_iter().enumerate() {
        out[span - degree + r] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Column;

    fn table(cols: Vec<Column>) -> CovariateTable {
        let rows = cols[0].len();
        CovariateTable::new(rows, cols).unwrap()
    }

    #[test]
    fn parses_formulas() {
        let f: Formula = "x + poly(z, 2) + s(t) + s(u, 5)".parse().unwrap();
        assert_eq!(
            f.terms,
            vec![
                Term::Column("x".into()),
                Term::Poly { column: "z".into(), degree: 2 },
                Term::Spline { column: "t".into(), df: 10 },
                Term::Spline { column: "u".into(), df: 5 },
            ]
        );
        assert_eq!(f.to_string().parse::<Formula>().unwrap(), f);
        assert!("1".parse::<Formula>().unwrap().terms.is_empty());
        assert!("poly(z, 0)".parse::<Formula>().is_err());
        assert!("log(z)".parse::<Formula>().is_err());
    }

    #[test]
    fn intercept_only_is_column_of_ones() {
        let t = table(vec![Column::numeric("x", vec![1.0, 2.0, 3.0])]);
        let dm = build_design_matrix(&t, &Formula::default()).unwrap();
        assert_eq!(dm.matrix, DMatrix::from_element(3, 1, 1.0));
    }

    #[test]
    fn binary_categorical_gives_one_dummy() {
        let t = table(vec![Column::categorical("g", &["b", "a", "b", "a"])]);
        let dm = build_design_matrix(&t, &"g".parse().unwrap()).unwrap();
        assert_eq!(dm.ncols(), 2);
        assert_eq!(dm.labels[1], "gb");
        assert_eq!(dm.matrix.column(1).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn polynomial_columns() {
        let t = table(vec![Column::numeric("x", vec![1.0, 2.0, 3.0])]);
        let dm = build_design_matrix(&t, &"poly(x, 2)".parse().unwrap()).unwrap();
        assert_eq!(dm.matrix, DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 1.0, 2.0, 4.0, 1.0, 3.0, 9.0]));
    }

    #[test]
    fn constant_column_is_rank_deficient() {
        let t = table(vec![Column::numeric("c", vec![2.0; 4])]);
        match build_design_matrix(&t, &"c".parse().unwrap()) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["c".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn unknown_column_is_config_error() {
        let t = table(vec![Column::numeric("x", vec![1.0, 2.0])]);
        assert!(matches!(build_design_matrix(&t, &"y".parse().unwrap()), Err(Error::Config(_))));
    }

    #[test]
    fn bspline_partition_of_unity() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 / 199.0).powi(2) * 10.0).collect();
        let knots = spline_knots(&x, 10);
        assert_eq!(knots.len() - SPLINE_DEGREE - 1, 11);
        for &v in &[0.0, 0.3, 2.2, 5.0, 9.99, 10.0] {
            let b = bspline_basis(&knots, SPLINE_DEGREE, v);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12, "x = {v}");
            assert!(b.iter().all(|&z| z >= -1e-15));
        }
    }

    #[test]
    fn spline_design_full_rank_and_reproducible_rows() {
        let x: Vec<f64> = (0..150).map(|i| ((i * 37) % 150) as f64 / 7.0).collect();
        let t = table(vec![Column::numeric("t", x.clone())]);
        let dm = build_design_matrix(&t, &"s(t)".parse().unwrap()).unwrap();
        assert_eq!(dm.ncols(), 11);
        for i in [0, 17, 149] {
            let row = dm.row_for(|_| Some(CovariateValue::Numeric(x[i]))).unwrap();
            let expect: Vec<f64> = dm.matrix.row(i).iter().copied().collect();
            assert_eq!(row, expect);
        }
        assert!(dm.row_for(|_| Some(CovariateValue::Numeric(1e6))).is_err());
    }
}
