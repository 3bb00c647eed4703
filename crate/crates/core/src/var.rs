//! Reduced-form VAR estimation, companion form and moving-average coefficients.
//!
//! The model is `y_t = α + A_1 y_{t-1} + … + A_p y_{t-p} + ε_t`. All
//! equations share the regressor row `[1, y_{t-1}ᵀ, …, y_{t-p}ᵀ]`, so the
//! system is one multivariate least-squares problem solved by a single QR
//! factorization of the regressor matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{least_squares, Singular};
use crate::ts::{MonthRange, Panel, YearMonth};

/// Spectral radius must stay below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum VarError {
    #[error("too few observations: need more than {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("regressor cross-product is numerically singular (rcond {rcond:.3e})")]
    SingularDesign { rcond: f64 },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
}

impl From<Singular> for VarError {
    fn from(s: Singular) -> Self {
        VarError::SingularDesign { rcond: s.rcond }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpec {
    pub lags: usize,
    pub intercept: bool,
}

impl Default for VarSpec {
    fn default() -> Self {
        Self { lags: 24, intercept: true }
    }
}

impl VarSpec {
    pub fn new(lags: usize) -> Self {
        Self { lags, intercept: true }
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    fn regressors(&self, k: usize) -> usize {
        usize::from(self.intercept) + k * self.lags
    }
}

/// Estimated reduced form together with the data it was fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedForm {
    spec: VarSpec,
    alpha: DVector<f64>,
    lags: Vec<DMatrix<f64>>,
    residuals: DMatrix<f64>,
    sigma: DMatrix<f64>,
    data: DMatrix<f64>,
    start: YearMonth,
    var_names: Vec<String>,
}

impl ReducedForm {
    /// Assembles a reduced form from known coefficients.
    ///
    /// `data` holds the `T` observed rows (the first `p` are initial
    /// conditions) and `residuals` the `T - p` innovations; both may be empty
    /// (zero rows) for a purely theoretical model, in which case `sigma` must
    /// be supplied.
    pub fn from_parts(
        alpha: DVector<f64>,
        lags: Vec<DMatrix<f64>>,
        sigma: DMatrix<f64>,
        residuals: DMatrix<f64>,
        data: DMatrix<f64>,
        start: YearMonth,
        var_names: Vec<String>,
    ) -> Result<Self, VarError> {
        let k = alpha.len();
        let p = lags.len();
        if p == 0 {
            return Err(VarError::InvalidSpec("at least one lag matrix required".into()));
        }
        if lags.iter().any(|a| a.shape() != (k, k)) || sigma.shape() != (k, k) || var_names.len() != k {
            return Err(VarError::InvalidSpec("dimension mismatch".into()));
        }
        if residuals.ncols() != k || data.ncols() != k {
            return Err(VarError::InvalidSpec("data/residual width mismatch".into()));
        }
        if data.nrows() > 0 && residuals.nrows() + p != data.nrows() {
            return Err(VarError::InvalidSpec("residual rows must equal T - p".into()));
        }
        Ok(Self {
            spec: VarSpec { lags: p, intercept: alpha.iter().any(|a| *a != 0.0) },
            alpha,
            lags,
            residuals,
            sigma,
            data,
            start,
            var_names,
        })
    }

    /// Theoretical model with given lag matrices and innovation covariance.
    pub fn from_coefficients(lags: Vec<DMatrix<f64>>, sigma: DMatrix<f64>) -> Result<Self, VarError> {
        let k = sigma.nrows();
        let names = (1..=k).map(|i| format!("y{i}")).collect();
        Self::from_parts(
            DVector::zeros(k),
            lags,
            sigma,
            DMatrix::zeros(0, k),
            DMatrix::zeros(0, k),
            YearMonth::new(2000, 1).expect("valid month"),
            names,
        )
    }

    pub fn spec(&self) -> VarSpec {
        self.spec
    }

    pub fn nvars(&self) -> usize {
        self.alpha.len()
    }

    pub fn nlags(&self) -> usize {
        self.lags.len()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// `A_1..A_p`.
    pub fn lag_matrices(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    /// `(T - p) × K` reduced-form residuals.
    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Full `T × K` estimation data including the `p` initial rows.
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    /// Month of the first data row.
    pub fn data_start(&self) -> YearMonth {
        self.start
    }

    /// Months covered by the residuals, `t = p+1 .. T`.
    pub fn sample_range(&self) -> MonthRange {
        let first = self.start.offset(self.nlags() as i64);
        MonthRange {
            start: first,
            end: first.offset(self.residuals.nrows() as i64 - 1),
        }
    }

    /// `y_t - ε̂_t` for `t > p`.
    pub fn fitted(&self) -> DMatrix<f64> {
        let p = self.nlags();
        let n = self.residuals.nrows();
        self.data.rows(p, n) - &self.residuals
    }

    /// Runs the recursion forward from `init` (`p × K`, oldest first) driven by
    /// `innovations` (`n × K`), returning all `p + n` rows.
    pub fn simulate(&self, init: &DMatrix<f64>, innovations: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.nlags();
        let k = self.nvars();
        assert_eq!(init.shape(), (p, k));
        assert_eq!(innovations.ncols(), k);
        let n = innovations.nrows();
        let mut y = DMatrix::zeros(p + n, k);
        y.rows_mut(0, p).copy_from(init);
        let mut row = DVector::zeros(k);
        for t in p..p + n {
            row.copy_from(&self.alpha);
            for (i, a) in self.lags.iter().enumerate() {
                let lagged = y.row(t - 1 - i).transpose();
                row.gemv(1.0, a, &lagged, 1.0);
            }
            for j in 0..k {
                y[(t, j)] = row[j] + innovations[(t - p, j)];
            }
        }
        y
    }

    /// Serializable view for `estimate --out`.
    pub fn to_document(&self, include_residuals: bool) -> ReducedFormDoc {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        ReducedFormDoc {
            var_names: self.var_names.clone(),
            lags: self.nlags(),
            intercept: self.spec.intercept,
            sample: self.sample_range(),
            nobs: self.residuals.nrows(),
            alpha: self.alpha.iter().copied().collect(),
            coefficients: self.lags.iter().map(rows).collect(),
            sigma: rows(&self.sigma),
            residuals: include_residuals.then(|| rows(&self.residuals)),
        }
    }
}

/// JSON layout of a fitted reduced form. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedFormDoc {
    pub var_names: Vec<String>,
    pub lags: usize,
    pub intercept: bool,
    pub sample: MonthRange,
    pub nobs: usize,
    pub alpha: Vec<f64>,
    /// `coefficients[i]` is `A_{i+1}`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub residuals: Option<Vec<Vec<f64>>>,
}

/// Stacked regressors `[1, y_{t-1}ᵀ, …, y_{t-p}ᵀ]` for `t = p..T-1` (0-based).
pub fn design_matrix(data: &DMatrix<f64>, spec: VarSpec) -> DMatrix<f64> {
    let (t_obs, k) = data.shape();
    let p = spec.lags;
    let c = usize::from(spec.intercept);
    DMatrix::from_fn(t_obs - p, spec.regressors(k), |r, col| {
        if c == 1 && col == 0 {
            return 1.0;
        }
        let j = col - c;
        let lag = j / k + 1;
        data[(r + p - lag, j % k)]
    })
}

/// Fits the reduced form to a panel.
pub fn estimate(panel: &Panel, spec: VarSpec) -> Result<ReducedForm, VarError> {
    estimate_matrix(&panel.matrix(), panel.range().start, panel.names(), spec)
}

/// Fits the reduced form to a `T × K` data matrix whose first row is `start`.
pub fn estimate_matrix(
    data: &DMatrix<f64>,
    start: YearMonth,
    var_names: Vec<String>,
    spec: VarSpec,
) -> Result<ReducedForm, VarError> {
    let (t_obs, k) = data.shape();
    let p = spec.lags;
    if p == 0 {
        return Err(VarError::InvalidSpec("lag order must be at least 1".into()));
    }
    if k == 0 || var_names.len() != k {
        return Err(VarError::InvalidSpec("variable names must match data width".into()));
    }
    let needed = k * p + 1 + p;
    if t_obs <= needed {
        return Err(VarError::TooFewObservations { needed, got: t_obs });
    }

    let x = design_matrix(data, spec);
    let y = data.rows(p, t_obs - p).into_owned();
    let coef = least_squares(&x, &y)?;
    let residuals = &y - &x * &coef;
    let n = residuals.nrows() as f64;
    let mut sigma = residuals.transpose() * &residuals / n;
    // enforce exact symmetry
    for i in 0..k {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }

    let c = usize::from(spec.intercept);
    let alpha = if spec.intercept {
        coef.row(0).transpose()
    } else {
        DVector::zeros(k)
    };
    // coef rows are regressors, columns equations: A_i[eq, var] = coef[c + (i-1)K + var, eq]
    let lags = (0..p)
        .map(|i| coef.rows(c + i * k, k).transpose())
        .collect();

    Ok(ReducedForm {
        spec,
        alpha,
        lags,
        residuals,
        sigma,
        data: data.clone(),
        start,
        var_names,
    })
}

/// `(Kp) × (Kp)` companion matrix.
pub fn companion(rf: &ReducedForm) -> DMatrix<f64> {
    let k = rf.nvars();
    let p = rf.nlags();
    let mut c = DMatrix::zeros(k * p, k * p);
    for (i, a) in rf.lag_matrices().iter().enumerate() {
        c.view_mut((0, i * k), (k, k)).copy_from(a);
    }
    for i in 1..p {
        c.view_mut((i * k, (i - 1) * k), (k, k)).fill_with_identity();
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stability {
    pub stable: bool,
    pub max_modulus: f64,
}

/// Stable iff the companion spectral radius is below `1 - 1e-9`.
pub fn is_stable(rf: &ReducedForm) -> Stability {
    let max_modulus = companion(rf)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    Stability {
        stable: max_modulus < 1.0 - STABILITY_MARGIN,
        max_modulus,
    }
}

/// Moving-average coefficients `Φ_0..Φ_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaCoefficients {
    pub phi: Vec<DMatrix<f64>>,
}

impl MaCoefficients {
    pub fn horizon(&self) -> usize {
        self.phi.len() - 1
    }
}

/// `Φ_0 = I`, `Φ_h = Σ_{i=1..min(h,p)} Φ_{h-i} A_i`.
pub fn ma_coefficients(rf: &ReducedForm, horizon: usize) -> MaCoefficients {
    let k = rf.nvars();
    let a = rf.lag_matrices();
    let mut phi: Vec<DMatrix<f64>> = Vec::with_capacity(horizon + 1);
    phi.push(DMatrix::identity(k, k));
    for h in 1..=horizon {
        let mut acc = DMatrix::zeros(k, k);
        for i in 1..=h.min(a.len()) {
            acc.gemm(1.0, &phi[h - i], &a[i - 1], 1.0);
        }
        phi.push(acc);
    }
    MaCoefficients { phi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::MonthlySeries;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn scalar_rf(coefs: &[f64]) -> ReducedForm {
        ReducedForm::from_coefficients(
            coefs.iter().map(|c| DMatrix::from_element(1, 1, *c)).collect(),
            DMatrix::identity(1, 1),
        )
        .unwrap()
    }

    #[test]
    fn noiseless_ar1_recovered_exactly() {
        let mut v = vec![1.0];
        for _ in 0..40 {
            v.push(0.5 * v.last().unwrap());
        }
        let panel = Panel::new(vec![MonthlySeries::new("y", ym("1990-01"), v).unwrap()]).unwrap();
        let rf = estimate(&panel, VarSpec::new(1).without_intercept()).unwrap();
        assert_abs_diff_eq!(rf.lag_matrices()[0][(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rf.sigma()[(0, 0)], 0.0, epsilon = 1e-28);
    }

    #[test]
    fn too_few_observations() {
        let panel = Panel::new(vec![
            MonthlySeries::new("a", ym("1990-01"), vec![1.0, 2.0, 0.5, 4.0, 3.0]).unwrap(),
            MonthlySeries::new("b", ym("1990-01"), vec![0.3, 2.0, 1.0, 0.0, 3.0]).unwrap(),
        ])
        .unwrap();
        // K=2, p=1: need T > 4
        assert!(estimate(&panel, VarSpec::new(1)).is_ok());
        assert_eq!(
            estimate(&panel, VarSpec::new(2)).unwrap_err(),
            VarError::TooFewObservations { needed: 7, got: 5 }
        );
    }

    #[test]
    fn constant_series_is_singular() {
        let panel = Panel::new(vec![MonthlySeries::new("c", ym("1990-01"), vec![2.0; 30]).unwrap()]).unwrap();
        assert!(matches!(estimate(&panel, VarSpec::new(1)), Err(VarError::SingularDesign { .. })));
    }

    #[test]
    fn white_noise_lags_are_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data = DMatrix::from_fn(5000, 2, |_, _| StandardNormal.sample(&mut rng));
        let rf = estimate_matrix(&data, ym("1900-01"), vec!["a".into(), "b".into()], VarSpec::new(1)).unwrap();
        for v in rf.lag_matrices()[0].iter() {
            assert!(v.abs() < 0.05, "{v}");
        }
        let col_means = rf.residuals().row_mean();
        assert!(col_means.amax() < 1e-10);
    }

    #[test]
    fn companion_examples() {
        let rf = scalar_rf(&[0.5, 0.3]);
        assert_eq!(companion(&rf), DMatrix::from_row_slice(2, 2, &[0.5, 0.3, 1.0, 0.0]));
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let rf = ReducedForm::from_coefficients(vec![a.clone()], DMatrix::identity(2, 2)).unwrap();
        assert_eq!(companion(&rf), a);
        let ev = companion(&scalar_rf(&[0.9])).complex_eigenvalues();
        assert_abs_diff_eq!(ev[0].re, 0.9, epsilon = 1e-15);
    }

    #[test]
    fn stability_examples() {
        let s = is_stable(&scalar_rf(&[0.5]));
        assert!(s.stable);
        assert_abs_diff_eq!(s.max_modulus, 0.5, epsilon = 1e-15);
        let s = is_stable(&scalar_rf(&[1.0]));
        assert!(!s.stable);
        assert_abs_diff_eq!(s.max_modulus, 1.0, epsilon = 1e-15);
        // y_t = 0.5 y_{t-1} + 0.5 y_{t-2} has a unit root
        assert!(!is_stable(&scalar_rf(&[0.5, 0.5])).stable);
    }

    #[test]
    fn ma_examples() {
        let rf = scalar_rf(&[0.7]);
        assert_eq!(ma_coefficients(&rf, 0).phi, vec![DMatrix::identity(1, 1)]);

        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.2]));
        let rf = ReducedForm::from_coefficients(vec![a], DMatrix::identity(2, 2)).unwrap();
        let ma = ma_coefficients(&rf, 6);
        for (h, phi) in ma.phi.iter().enumerate() {
            assert_abs_diff_eq!(phi[(0, 0)], 0.5f64.powi(h as i32), epsilon = 1e-15);
            assert_abs_diff_eq!(phi[(1, 1)], 0.2f64.powi(h as i32), epsilon = 1e-15);
            assert_eq!(phi[(0, 1)], 0.0);
            assert_eq!(phi[(1, 0)], 0.0);
        }
    }

    #[test]
    fn ma_truncation_is_prefix() {
        let rf = scalar_rf(&[0.4, -0.2, 0.1]);
        let short = ma_coefficients(&rf, 5);
        let long = ma_coefficients(&rf, 11);
        assert_eq!(&long.phi[..6], &short.phi[..]);
    }

    #[test]
    fn simulate_reproduces_data_with_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DMatrix::from_fn(200, 2, |_, _| StandardNormal.sample(&mut rng));
        let rf = estimate_matrix(&data, ym("1990-01"), vec!["a".into(), "b".into()], VarSpec::new(2)).unwrap();
        let rebuilt = rf.simulate(&data.rows(0, 2).into_owned(), rf.residuals());
        assert!((rebuilt - &data).amax() < 1e-10);
        assert!((rf.fitted() + rf.residuals() - data.rows(2, 198)).amax() < 1e-10);
    }

    #[test]
    fn document_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = DMatrix::from_fn(60, 2, |_, _| StandardNormal.sample(&mut rng));
        let rf = estimate_matrix(&data, ym("1990-01"), vec!["a".into(), "b".into()], VarSpec::new(3)).unwrap();
        let doc = rf.to_document(false);
        assert_eq!(doc.coefficients.len(), 3);
        assert_eq!(doc.sample.start, ym("1990-04"));
        assert_eq!(doc.nobs, 57);
        let json = serde_json::to_string(&doc).unwrap();
        assert!(!json.contains("residuals"));
        let back: ReducedFormDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(rf.to_document(true).residuals.unwrap().len(), 57);
    }
}
