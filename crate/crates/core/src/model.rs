//! Linear-Gaussian structural VAR models.
//!
//! A model with `n` variables and `p` lags is
//!
//! ```text
//! A0' x_t + A1' x_{t-1} + ... + Ap' x_{t-p} = e_t,    e_t ~ N(0, diag(d0))
//! ```
//!
//! where `A0` has a unit diagonal and is triangular under some ordering of the
//! variables. An off-diagonal entry `A0[(k, j)]` is the (negated) effect of
//! `x_k` on `x_j` in the same period, and `Ak[(i, j)]` the (negated) effect of
//! `x_i` at `t - k` on `x_j` at `t`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default magnitude below which a fitted coefficient is treated as absent.
pub const DEFAULT_ZERO_TOL: f64 = 1e-12;

const DIAGONAL_TOL: f64 = 1e-12;
const STATIONARITY_MARGIN: f64 = 1e-10;

/// Coefficient matrices `[A0, A1, ..., Ap]`.
pub type CoefStack = Vec<DMatrix<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct CausalModel {
    a0: DMatrix<f64>,
    lags: Vec<DMatrix<f64>>,
    d0: DVector<f64>,
    labels: Vec<String>,
}

impl CausalModel {
    /// Builds a model, checking unit diagonal, acyclicity, positive noise
    /// variances and matching dimensions. `labels = None` assigns `x1..xn`.
    pub fn new(
        a0: DMatrix<f64>,
        lags: Vec<DMatrix<f64>>,
        d0: DVector<f64>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = a0.nrows();
        if n == 0 {
            return Err(Error::invalid_model("model has no variables"));
        }
        if !is_acyclic(&a0)? {
            return Err(Error::invalid_model("contemporaneous matrix contains a cycle"));
        }
        for (k, lag) in lags.iter().enumerate() {
            if lag.nrows() != n || lag.ncols() != n {
                return Err(Error::dimension(format!(
                    "lag matrix {} is {}x{}, expected {n}x{n}",
                    k + 1,
                    lag.nrows(),
                    lag.ncols()
                )));
            }
        }
        if d0.len() != n {
            return Err(Error::dimension(format!(
                "noise variance vector has length {}, expected {n}",
                d0.len()
            )));
        }
        if let Some(i) = d0.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid_model(format!(
                "noise variance {} is not strictly positive ({})",
                i + 1,
                d0[i]
            )));
        }
        if a0.iter().chain(lags.iter().flat_map(|m| m.iter())).any(|v| !v.is_finite()) {
            return Err(Error::invalid_model("non-finite coefficient"));
        }
        let labels = match labels {
            Some(l) if l.len() != n => {
                return Err(Error::dimension(format!(
                    "{} labels for {n} variables",
                    l.len()
                )))
            }
            Some(l) => l,
            None => default_labels(n),
        };
        Ok(Self {
            a0,
            lags,
            d0,
            labels,
        })
    }

    /// Model with no contemporaneous or lagged effects.
    pub fn independent_noise(d0: DVector<f64>, p: usize, labels: Option<Vec<String>>) -> Result<Self> {
        let n = d0.len();
        Self::new(
            DMatrix::identity(n, n),
            vec![DMatrix::zeros(n, n); p],
            d0,
            labels,
        )
    }

    pub fn n(&self) -> usize {
        self.a0.nrows()
    }

    pub fn p(&self) -> usize {
        self.lags.len()
    }

    pub fn a0(&self) -> &DMatrix<f64> {
        &self.a0
    }

    pub fn lags(&self) -> &[DMatrix<f64>] {
        &self.lags
    }

    /// Lag matrix `A_k` for `k` in `1..=p`.
    pub fn lag(&self, k: usize) -> &DMatrix<f64> {
        &self.lags[k - 1]
    }

    pub fn d0(&self) -> &DVector<f64> {
        &self.d0
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::dimension("label count does not match variable count"));
        }
        self.labels = labels;
        Ok(self)
    }

    /// `[A0, A1, ..., Ap]` as owned matrices.
    pub fn coefficient_stack(&self) -> CoefStack {
        std::iter::once(self.a0.clone())
            .chain(self.lags.iter().cloned())
            .collect()
    }

    /// Builds a model from a coefficient stack `[A0, A1, ..., Ap]`.
    pub fn from_stack(stack: CoefStack, d0: DVector<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let mut it = stack.into_iter();
        let a0 = it
            .next()
            .ok_or_else(|| Error::dimension("empty coefficient stack"))?;
        Self::new(a0, it.collect(), d0, labels)
    }

    /// Reduced-form VAR `x_t = sum_k Phi_k x_{t-k} + u_t` with
    /// `Phi_k = -(A0')^-1 Ak'` and `cov(u) = (A0')^-1 D0 A0^-1`.
    pub fn reduced_form(&self) -> Result<ReducedForm> {
        let a0t_inv = self
            .a0
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::invalid_model("contemporaneous matrix is singular"))?;
        let phi = self
            .lags
            .iter()
            .map(|ak| -(&a0t_inv * ak.transpose()))
            .collect();
        let innovation_cov =
            linalg::symmetrize(&(&a0t_inv * DMatrix::from_diagonal(&self.d0) * a0t_inv.transpose()));
        Ok(ReducedForm {
            phi,
            innovation_cov,
        })
    }

    /// Largest eigenvalue modulus of the companion matrix of the reduced form.
    pub fn spectral_radius(&self) -> Result<f64> {
        let rf = self.reduced_form()?;
        let n = self.n();
        let p = self.p();
        if p == 0 {
            return Ok(0.0);
        }
        let companion = companion_matrix(&rf.phi, n);
        let schur = [f64::EPSILON, 1e-13, 1e-11]
            .iter()
            .find_map(|&eps| Schur::try_new(companion.clone(), eps, 100_000))
            .ok_or_else(|| Error::invalid_model("companion eigenvalues did not converge"))?;
        Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }

    /// Number of off-diagonal coefficients with magnitude above `zero_tol`.
    pub fn edge_count(&self, zero_tol: f64) -> usize {
        signature_of(self, zero_tol).edge_count()
    }
}

impl fmt::Display for CausalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variables: {}", self.labels.join(", "))?;
        write!(f, "A0 ={}", self.a0)?;
        for (k, lag) in self.lags.iter().enumerate() {
            write!(f, "A{} ={}", k + 1, lag)?;
        }
        write!(f, "d0 = {:?}", self.d0.as_slice())
    }
}

#[derive(Clone, Debug)]
pub struct ReducedForm {
    pub phi: Vec<DMatrix<f64>>,
    pub innovation_cov: DMatrix<f64>,
}

pub(crate) fn companion_matrix(phi: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let p = phi.len();
    let mut c = DMatrix::zeros(n * p, n * p);
    for (k, block) in phi.iter().enumerate() {
        c.view_mut((0, k * n), (n, n)).copy_from(block);
    }
    for k in 1..p {
        c.view_mut((k * n, (k - 1) * n), (n, n))
            .copy_from(&DMatrix::<f64>::identity(n, n));
    }
    c
}

pub fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

fn check_unit_diagonal(a0: &DMatrix<f64>) -> Result<()> {
    if a0.nrows() != a0.ncols() {
        return Err(Error::invalid_model(format!(
            "contemporaneous matrix is {}x{}, not square",
            a0.nrows(),
            a0.ncols()
        )));
    }
    for i in 0..a0.nrows() {
        if (a0[(i, i)] - 1.0).abs() > DIAGONAL_TOL {
            return Err(Error::invalid_model(format!(
                "contemporaneous diagonal entry {} is {}, expected 1",
                i + 1,
                a0[(i, i)]
            )));
        }
    }
    Ok(())
}

/// Topological order of the contemporaneous graph (causes first), or `None`
/// when the off-diagonal support contains a cycle.
pub fn causal_order(a0: &DMatrix<f64>) -> Result<Option<Vec<usize>>> {
    check_unit_diagonal(a0)?;
    let n = a0.nrows();
    let mut indegree = vec![0usize; n];
    for k in 0..n {
        for j in 0..n {
            if k != j && a0[(k, j)] != 0.0 {
                indegree[j] += 1;
            }
        }
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&j| indegree[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(k) = queue.pop_front() {
        order.push(k);
        for j in 0..n {
            if k != j && a0[(k, j)] != 0.0 {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    queue.push_back(j);
                }
            }
        }
    }
    Ok((order.len() == n).then_some(order))
}

/// True iff a simultaneous row/column permutation makes `a0` triangular.
pub fn is_acyclic(a0: &DMatrix<f64>) -> Result<bool> {
    Ok(causal_order(a0)?.is_some())
}

/// True iff every companion eigenvalue lies strictly inside the unit circle.
pub fn is_stationary(model: &CausalModel) -> Result<bool> {
    Ok(model.spectral_radius()? < 1.0 - STATIONARITY_MARGIN)
}

/// Block lower-triangular stack with `A0'` on the diagonal and `Ak'` on the
/// k-th block subdiagonal, `copies` blocks on a side.
pub fn stack_full_matrix(model: &CausalModel, copies: usize) -> Result<DMatrix<f64>> {
    let n = model.n();
    let p = model.p();
    if copies < p + 1 {
        return Err(Error::dimension(format!(
            "stacked matrix needs at least {} copies, got {copies}",
            p + 1
        )));
    }
    let mut out = DMatrix::zeros(n * copies, n * copies);
    for i in 0..copies {
        for k in 0..=p.min(i) {
            let j = i - k;
            let block = if k == 0 { model.a0() } else { model.lag(k) };
            out.view_mut((i * n, j * n), (n, n))
                .copy_from(&block.transpose());
        }
    }
    Ok(out)
}

/// A lagged edge: `cause` at `t - lag` affects `effect` at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub cause: usize,
    pub effect: usize,
    pub lag: usize,
}

/// Support pattern of a coefficient stack in original variable order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StructureSignature {
    n: usize,
    p: usize,
    contemporaneous: BTreeSet<(usize, usize)>,
    temporal: BTreeSet<TemporalEdge>,
}

impl StructureSignature {
    pub fn new(
        n: usize,
        p: usize,
        contemporaneous: impl IntoIterator<Item = (usize, usize)>,
        temporal: impl IntoIterator<Item = TemporalEdge>,
    ) -> Result<Self> {
        let contemporaneous: BTreeSet<_> = contemporaneous.into_iter().collect();
        let temporal: BTreeSet<_> = temporal.into_iter().collect();
        for &(c, e) in &contemporaneous {
            if c >= n || e >= n {
                return Err(Error::dimension(format!("edge ({c}, {e}) out of range for n = {n}")));
            }
            if c == e {
                return Err(Error::invalid_model(format!("self edge on variable {c}")));
            }
        }
        for t in &temporal {
            if t.cause >= n || t.effect >= n || t.lag == 0 || t.lag > p {
                return Err(Error::dimension(format!("temporal edge {t:?} out of range")));
            }
        }
        let sig = Self {
            n,
            p,
            contemporaneous,
            temporal,
        };
        if !is_acyclic(&sig.contemporaneous_indicator())? {
            return Err(Error::invalid_model("signature contains a contemporaneous cycle"));
        }
        Ok(sig)
    }

    pub fn empty(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            contemporaneous: BTreeSet::new(),
            temporal: BTreeSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn contemporaneous(&self) -> &BTreeSet<(usize, usize)> {
        &self.contemporaneous
    }

    pub fn temporal(&self) -> &BTreeSet<TemporalEdge> {
        &self.temporal
    }

    pub fn edge_count(&self) -> usize {
        self.contemporaneous.len() + self.temporal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edge_count() == 0
    }

    /// Whether stack position `(matrix, row, col)` is an edge; matrix 0 is `A0`.
    pub fn contains(&self, matrix: usize, row: usize, col: usize) -> bool {
        if matrix == 0 {
            self.contemporaneous.contains(&(row, col))
        } else {
            self.temporal.contains(&TemporalEdge {
                cause: row,
                effect: col,
                lag: matrix,
            })
        }
    }

    /// Unit-diagonal 0/1 matrix of contemporaneous edges.
    pub fn contemporaneous_indicator(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.n, self.n);
        for &(c, e) in &self.contemporaneous {
            m[(c, e)] = 1.0;
        }
        m
    }

    /// Human-readable edge list such as `w(t-1) -> u, e -> z`.
    pub fn describe(&self, labels: &[String]) -> String {
        let name = |i: usize| labels.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1));
        let mut parts: Vec<String> = self
            .contemporaneous
            .iter()
            .map(|&(c, e)| format!("{} -> {}", name(c), name(e)))
            .collect();
        parts.extend(
            self.temporal
                .iter()
                .map(|t| format!("{}(t-{}) -> {}", name(t.cause), t.lag, name(t.effect))),
        );
        if parts.is_empty() {
            "(no edges)".to_string()
        } else {
            parts.join(", ")
        }
    }
}

/// Support of `model` with `|coefficient| > zero_tol` counted as an edge.
pub fn signature_of(model: &CausalModel, zero_tol: f64) -> StructureSignature {
    let n = model.n();
    let mut contemporaneous = BTreeSet::new();
    let mut temporal = BTreeSet::new();
    for k in 0..n {
        for j in 0..n {
            if k != j && model.a0[(k, j)].abs() > zero_tol {
                contemporaneous.insert((k, j));
            }
        }
    }
    for (l, lag) in model.lags.iter().enumerate() {
        for k in 0..n {
            for j in 0..n {
                if lag[(k, j)].abs() > zero_tol {
                    temporal.insert(TemporalEdge {
                        cause: k,
                        effect: j,
                        lag: l + 1,
                    });
                }
            }
        }
    }
    StructureSignature {
        n,
        p: model.p(),
        contemporaneous,
        temporal,
    }
}

/// Observations in time order, one row per period.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesData {
    values: DMatrix<f64>,
    labels: Vec<String>,
}

impl TimeSeriesData {
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 observations, got {}",
                values.nrows()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::InsufficientData("no variables".into()));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::InsufficientData(format!(
                "non-finite value at row {row}, column {col}"
            )));
        }
        let labels = match labels {
            Some(l) if l.len() != values.ncols() => {
                return Err(Error::dimension(format!(
                    "{} labels for {} columns",
                    l.len(),
                    values.ncols()
                )))
            }
            Some(l) => l,
            None => default_labels(values.ncols()),
        };
        Ok(Self { values, labels })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of observations `T`.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> DVector<f64> {
        DVector::from_fn(self.n_vars(), |j, _| self.values.column(j).mean())
    }

    /// Reads a CSV with a header row of labels and one row per period.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut flat = Vec::new();
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != labels.len() {
                return Err(Error::Ingestion {
                    row: r + 1,
                    column: String::new(),
                    reason: format!("expected {} fields, found {}", labels.len(), record.len()),
                });
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Ingestion {
                    row: r + 1,
                    column: labels[c].clone(),
                    reason: format!("cannot parse {field:?} as a number"),
                })?;
                flat.push(v);
            }
            rows += 1;
        }
        let values = DMatrix::from_row_slice(rows, labels.len(), &flat);
        Self::new(values, Some(labels))
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    /// Writes the header and rows using shortest round-trip decimal output.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.labels)?;
        for i in 0..self.len() {
            wtr.write_record(self.values.row(i).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// On-disk model layout. Matrices are row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelDocument {
    pub n: usize,
    pub p: usize,
    pub labels: Vec<String>,
    pub a0: Vec<Vec<f64>>,
    pub lags: Vec<Vec<Vec<f64>>>,
    pub d0: Vec<f64>,
}

impl From<&CausalModel> for ModelDocument {
    fn from(m: &CausalModel) -> Self {
        Self {
            n: m.n(),
            p: m.p(),
            labels: m.labels.clone(),
            a0: linalg::to_rows(&m.a0),
            lags: m.lags.iter().map(linalg::to_rows).collect(),
            d0: m.d0.iter().copied().collect(),
        }
    }
}

impl TryFrom<ModelDocument> for CausalModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        let n = doc.n;
        if doc.a0.len() != n {
            return Err(Error::dimension(format!("a0 has {} rows, expected {n}", doc.a0.len())));
        }
        if doc.lags.len() != doc.p {
            return Err(Error::dimension(format!(
                "document declares p = {} but has {} lag matrices",
                doc.p,
                doc.lags.len()
            )));
        }
        let a0 = linalg::from_rows(&doc.a0, n).ok_or_else(|| Error::dimension("ragged a0"))?;
        let lags = doc
            .lags
            .iter()
            .map(|rows| {
                if rows.len() != n {
                    return Err(Error::dimension("lag matrix has wrong row count"));
                }
                linalg::from_rows(rows, n).ok_or_else(|| Error::dimension("ragged lag matrix"))
            })
            .collect::<Result<Vec<_>>>()?;
        CausalModel::new(a0, lags, DVector::from_vec(doc.d0), Some(doc.labels))
    }
}

impl CausalModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
