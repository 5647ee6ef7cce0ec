//! Evaluation metrics and the tests used to compare models.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use statrs::function::beta::beta_reg;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 observations, got {0}")]
    TooFew(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("paired differences have zero variance")]
    ZeroVarianceDiffs,
    #[error("|r| = {0} must be < 1")]
    OutOfRange(f64),
    #[error("non-finite input")]
    NonFinite,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean squared error divided by the population variance of `gt`. A
/// predictor that always outputs the mean of `gt` scores exactly 1; worse
/// predictors exceed 1.
pub fn nmse(pred: &[f64], gt: &[f64]) -> Result<f64, MetricsError> {
    check_pair(pred, gt)?;
    let m = mean(gt);
    let var = gt.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gt.len() as f64;
    if !(var > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / gt.len() as f64;
    Ok(mse / var)
}

/// Fisher r-to-z transform, `atanh(r)`, evaluated on `|r|` so that it is
/// exactly odd.
pub fn fisher_z(r: f64) -> Result<f64, MetricsError> {
    if !(r.abs() < 1.0) {
        return Err(MetricsError::OutOfRange(r));
    }
    Ok(r.abs().atanh().copysign(r))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest, MetricsError> {
    check_pair(a, b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let var = d.iter().map(|v| (v - md).powi(2)).sum::<f64>() / (n - 1.0);
    let dof = n - 1.0;
    if var == 0.0 {
        if md == 0.0 {
            return Ok(TTest { t: 0.0, dof, p: 1.0 });
        }
        return Err(MetricsError::ZeroVarianceDiffs);
    }
    let t = md / (var.sqrt() / n.sqrt());
    Ok(TTest { t, dof, p: student_t_two_sided(t, dof) })
}

/// `P(|T| >= |t|)` for Student's t with `dof` degrees of freedom, via the
/// regularized incomplete beta function `I_{dof/(dof+t^2)}(dof/2, 1/2)`.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    beta_reg(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Mean and sample sd (n - 1).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    (m, var.sqrt())
}

/// Per-measure metrics for one model over a set of test bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub measures: Vec<String>,
    pub pearson_r: Vec<f64>,
    pub nmse: Vec<f64>,
    pub n_bundles: usize,
}

impl EvalReport {
    pub fn mean_r(&self) -> (f64, f64) {
        mean_sd(&self.pearson_r)
    }

    pub fn mean_nmse(&self) -> (f64, f64) {
        mean_sd(&self.nmse)
    }

    /// `measure,pearson_r,nmse` rows plus an `average` row of `mean±sd`.
    pub fn to_csv(&self, comment: &str) -> String {
        let mut s = String::new();
        for line in comment.lines() {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "# variant={} n_bundles={}", self.variant, self.n_bundles);
        s.push_str("measure,pearson_r,nmse\n");
        for ((m, r), e) in self.measures.iter().zip(&self.pearson_r).zip(&self.nmse) {
            let _ = writeln!(s, "{m},{r:.6},{e:.6}");
        }
        let (rm, rs) = self.mean_r();
        let (em, es) = self.mean_nmse();
        let _ = writeln!(s, "average,{rm:.6}±{rs:.6},{em:.6}±{es:.6}");
        s
    }
}

/// Pools all bundles: column `j` of `pred` against column `j` of `gt`.
pub fn evaluate(
    pred: ArrayView2<f64>,
    gt: ArrayView2<f64>,
    measures: &[&str],
    variant: &str,
) -> Result<EvalReport, MetricsError> {
    if pred.dim() != gt.dim() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if measures.len() != gt.ncols() {
        return Err(MetricsError::LengthMismatch(measures.len(), gt.ncols()));
    }
    let mut pearson = Vec::with_capacity(gt.ncols());
    let mut errs = Vec::with_capacity(gt.ncols());
    for j in 0..gt.ncols() {
        let p: Vec<f64> = pred.column(j).to_vec();
        let g: Vec<f64> = gt.column(j).to_vec();
        // A constant prediction has no defined correlation; score it as 0.
        pearson.push(match pearson_r(&p, &g) {
            Ok(r) => r,
            Err(MetricsError::ZeroVariance) if g.iter().any(|v| *v != g[0]) => 0.0,
            Err(e) => return Err(e),
        });
        errs.push(nmse(&p, &g)?);
    }
    Ok(EvalReport {
        variant: variant.to_string(),
        measures: measures.iter().map(|s| s.to_string()).collect(),
        pearson_r: pearson,
        nmse: errs,
        n_bundles: gt.nrows(),
    })
}

/// Paired comparison of two reports over measures: a t-test on the Fisher
/// z of Pearson r, and one on nMSE directly.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<(TTest, TTest), MetricsError> {
    let za = a.pearson_r.iter().map(|&r| fisher_z(r)).collect::<Result<Vec<_>, _>>()?;
    let zb = b.pearson_r.iter().map(|&r| fisher_z(r)).collect::<Result<Vec<_>, _>>()?;
    Ok((paired_t(&za, &zb)?, paired_t(&a.nmse, &b.nmse)?))
}

/// Side-by-side table: one column per report, rows per measure plus average.
pub fn ablation_table(reports: &[EvalReport], metric: &str) -> String {
    let mut s = String::from("measure");
    for r in reports {
        let _ = write!(s, ",{}", r.variant);
    }
    s.push('\n');
    let Some(first) = reports.first() else { return s };
    let pick = |r: &EvalReport| if metric == "nmse" { r.nmse.clone() } else { r.pearson_r.clone() };
    for (i, m) in first.measures.iter().enumerate() {
        s.push_str(m);
        for r in reports {
            let _ = write!(s, ",{:.3}", pick(r)[i]);
        }
        s.push('\n');
    }
    s.push_str("average");
    for r in reports {
        let (m, sd) = mean_sd(&pick(r));
        let _ = write!(s, ",{m:.3}±{sd:.3}");
    }
    s.push('\n');
    s
}
