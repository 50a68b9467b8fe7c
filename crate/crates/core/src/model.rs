//! Parametric-output HMM definitions, sampling, and ergodicity diagnostics.
//!
//! Transition matrices are column stochastic: `A[(i, j)] = P(X_t = i | X_{t-1} = j)`.
//! Discrete emission matrices follow the same convention, `B[(k, i)] = P(Y = k | X = i)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on column sums and probability-vector normalisation.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Relative singular-value threshold for the `rank(B) = n` check.
pub const RANK_TOL: f64 = 1e-8;

/// PRNG used for every seeded draw in the crate.
pub type SeededRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn check_column_stochastic(m: &DMatrix<f64>, what: &str, tol: f64) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if let Some(bad) = col.iter().find(|&&v| !(-0.0..=1.0).contains(&v) || v.is_nan()) {
            return Err(Error::InvalidModel(format!(
                "{what}: entry {bad} in column {j} is outside [0, 1]"
            )));
        }
        let s: f64 = col.iter().sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::InvalidModel(format!(
                "{what}: column {j} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

fn check_probability_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|&p| p < 0.0 || p.is_nan()) {
        return Err(Error::InvalidModel(format!("{what} has a negative entry")));
    }
    let s = v.sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Column-stochastic `n x n` transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() == 0 {
            return Err(Error::InvalidModel(format!(
                "transition matrix must be square and nonempty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        check_column_stochastic(&entries, "transition matrix", STOCHASTIC_TOL)?;
        Ok(Self(entries))
    }

    /// Rows as written in a model file: `rows[i][j] = P(i | j)`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }

    /// Relabels states so that old state `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self(relabel_square(&self.0, perm))
    }
}

/// `out[(perm[i], perm[j])] = m[(i, j)]`.
pub fn relabel_square(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(perm[i], perm[j])] = m[(i, j)];
        }
    }
    out
}

/// `out[perm[i]] = v[i]`.
pub fn relabel_vector(v: &DVector<f64>, perm: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for (i, &p) in perm.iter().enumerate() {
        out[p] = v[i];
    }
    out
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidModel("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `m x n` column-stochastic emission matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOutputModel {
    b: DMatrix<f64>,
}

impl DiscreteOutputModel {
    pub fn new(b: DMatrix<f64>) -> Result<Self> {
        if b.ncols() == 0 || b.nrows() < b.ncols() {
            return Err(Error::InvalidModel(format!(
                "emission matrix must be m x n with m >= n >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        check_column_stochastic(&b, "emission matrix", STOCHASTIC_TOL)?;
        Ok(Self { b })
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Alphabet size `m`.
    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    pub fn n(&self) -> usize {
        self.b.ncols()
    }

    /// Fails with `RankDeficientB` unless `sigma_min(B) > RANK_TOL * sigma_max(B)`.
    pub fn check_rank(&self) -> Result<()> {
        let ratio = linalg::inverse_condition(&self.b);
        if ratio > RANK_TOL {
            Ok(())
        } else {
            Err(Error::RankDeficientB(ratio))
        }
    }

    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut b = DMatrix::zeros(self.b.nrows(), self.b.ncols());
        for (i, &p) in perm.iter().enumerate() {
            b.set_column(p, &self.b.column(i));
        }
        Self { b }
    }
}

/// One univariate Gaussian output density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianComponent {
    pub fn new(mu: f64, sigma2: f64) -> Self {
        Self { mu, sigma2 }
    }

    pub fn density(&self, y: f64) -> f64 {
        let d = y - self.mu;
        (-0.5 * d * d / self.sigma2).exp() / (2.0 * PI * self.sigma2).sqrt()
    }

    pub fn log_density(&self, y: f64) -> f64 {
        let d = y - self.mu;
        -0.5 * d * d / self.sigma2 - 0.5 * (2.0 * PI * self.sigma2).ln()
    }

    /// `sup_y f(y)`.
    pub fn peak(&self) -> f64 {
        1.0 / (2.0 * PI * self.sigma2).sqrt()
    }
}

/// Ordered list of Gaussian output densities, one per hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOutputModel {
    components: Vec<GaussianComponent>,
}

impl GaussianOutputModel {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("no Gaussian components".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.sigma2 > 0.0 && c.sigma2.is_finite() && c.mu.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "component {i} has invalid parameters ({}, {})",
                    c.mu, c.sigma2
                )));
            }
        }
        for i in 0..components.len() {
            for j in 0..i {
                if components[i] == components[j] {
                    return Err(Error::InvalidModel(format!(
                        "components {j} and {i} share the same parameters"
                    )));
                }
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    /// Densities of every component at `y`, written into `out`.
    pub fn densities_into(&self, y: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.density(y);
        }
    }

    /// `max_i sup_y f_i(y)`.
    pub fn density_bound(&self) -> f64 {
        self.components
            .iter()
            .map(GaussianComponent::peak)
            .fold(0.0, f64::max)
    }

    pub fn relabel(&self, perm: &[usize]) -> Self {
        let mut components = self.components.clone();
        for (i, &p) in perm.iter().enumerate() {
            components[p] = self.components[i];
        }
        Self { components }
    }
}

/// Emission model of an HMM.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputModel {
    Discrete(DiscreteOutputModel),
    Gaussian(GaussianOutputModel),
}

impl OutputModel {
    pub fn n(&self) -> usize {
        match self {
            OutputModel::Discrete(d) => d.n(),
            OutputModel::Gaussian(g) => g.n(),
        }
    }

    pub fn relabel(&self, perm: &[usize]) -> Self {
        match self {
            OutputModel::Discrete(d) => OutputModel::Discrete(d.relabel(perm)),
            OutputModel::Gaussian(g) => OutputModel::Gaussian(g.relabel(perm)),
        }
    }
}

/// A full HMM: transitions, outputs and an optional initial distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmSpec {
    pub a: TransitionMatrix,
    pub outputs: OutputModel,
    pub initial: Option<DVector<f64>>,
}

impl HmmSpec {
    pub fn new(
        a: TransitionMatrix,
        outputs: OutputModel,
        initial: Option<DVector<f64>>,
    ) -> Result<Self> {
        let n = a.n();
        if outputs.n() != n {
            return Err(Error::InvalidModel(format!(
                "transition matrix has {n} states but outputs describe {}",
                outputs.n()
            )));
        }
        if let Some(p0) = &initial {
            if p0.len() != n {
                return Err(Error::InvalidModel(format!(
                    "initial distribution has length {}, expected {n}",
                    p0.len()
                )));
            }
            check_probability_vector(p0, "initial distribution")?;
        }
        Ok(Self {
            a,
            outputs,
            initial,
        })
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// Same chain with state `i` renamed to `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self {
            a: self.a.relabel(perm),
            outputs: self.outputs.relabel(perm),
            initial: self.initial.as_ref().map(|p| relabel_vector(p, perm)),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialisation cannot fail")
    }
}

/// Stationary vector of `a`: least-squares solution of `[(A - I); 1^T] pi = [0; 1]`.
///
/// Fails with `NonUniqueStationary` when the augmented system is rank deficient,
/// i.e. when the eigenvalue 1 has geometric multiplicity above one.
pub fn stationary_distribution(a: &TransitionMatrix) -> Result<DVector<f64>> {
    let n = a.n();
    let mut aug = DMatrix::zeros(n + 1, n);
    aug.view_mut((0, 0), (n, n))
        .copy_from(&(a.matrix() - DMatrix::identity(n, n)));
    aug.row_mut(n).fill(1.0);
    let sv = linalg::singular_values(&aug);
    let smin = sv.last().copied().unwrap_or(0.0);
    if smin <= 1e-10 * sv[0].max(1.0) {
        return Err(Error::NonUniqueStationary);
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let mut pi = linalg::lstsq(&aug, &rhs, 1e-14);
    // The SVD alone leaves residuals near 1e-12; refinement brings them to rounding level.
    for _ in 0..2 {
        let r = &rhs - &aug * &pi;
        pi += linalg::lstsq(&aug, &r, 1e-14);
    }
    pi.iter_mut().for_each(|p| *p = p.max(0.0));
    let s = pi.sum();
    Ok(pi / s)
}

/// Moduli of the eigenvalues of `a` other than the one closest to 1, descending.
fn subdominant_moduli(a: &TransitionMatrix) -> Vec<f64> {
    let eig = a.matrix().complex_eigenvalues();
    let mut vals: Vec<_> = eig.iter().copied().collect();
    if let Some(pos) = vals
        .iter()
        .enumerate()
        .min_by(|x, y| (x.1 - 1.0).norm().total_cmp(&(y.1 - 1.0).norm()))
        .map(|(k, _)| k)
    {
        vals.remove(pos);
    }
    let mut moduli: Vec<f64> = vals.iter().map(|z| z.norm().min(1.0)).collect();
    moduli.sort_by(|x, y| y.total_cmp(x));
    moduli
}

/// Hidden path plus emitted observations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub states: Vec<usize>,
    pub observations: Observations,
}

/// An observation sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Discrete(v) => v.len(),
            Observations::Continuous(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn draw_categorical<R: Rng>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let total = *cumulative.last().expect("nonempty distribution");
    let target = u * total;
    cumulative
        .iter()
        .position(|&c| target < c)
        .unwrap_or(cumulative.len() - 1)
}

fn cumulative(col: impl Iterator<Item = f64>) -> Vec<f64> {
    col.scan(0.0, |acc, p| {
        *acc += p;
        Some(*acc)
    })
    .collect()
}

/// Draws `t` steps of the chain and its emissions.
///
/// `X_0` comes from `spec.initial`, or from the stationary distribution when absent.
/// Output is a pure function of `(spec, t, seed)`.
pub fn sample(spec: &HmmSpec, t: usize, seed: u64) -> Result<SampledPath> {
    if t == 0 {
        return Err(Error::SequenceTooShort { len: 0, needed: 1 });
    }
    let p0 = match &spec.initial {
        Some(p) => p.clone(),
        None => stationary_distribution(&spec.a)?,
    };
    let mut rng = seeded_rng(seed);
    let trans: Vec<Vec<f64>> = spec
        .a
        .matrix()
        .column_iter()
        .map(|c| cumulative(c.iter().copied()))
        .collect();
    let init = cumulative(p0.iter().copied());

    let mut states = Vec::with_capacity(t);
    let mut state = draw_categorical(&init, &mut rng);
    match &spec.outputs {
        OutputModel::Discrete(d) => {
            let emit: Vec<Vec<f64>> = d
                .b()
                .column_iter()
                .map(|c| cumulative(c.iter().copied()))
                .collect();
            let mut obs = Vec::with_capacity(t);
            for step in 0..t {
                if step > 0 {
                    state = draw_categorical(&trans[state], &mut rng);
                }
                states.push(state);
                obs.push(draw_categorical(&emit[state], &mut rng));
            }
            Ok(SampledPath {
                states,
                observations: Observations::Discrete(obs),
            })
        }
        OutputModel::Gaussian(g) => {
            let params: Vec<(f64, f64)> = g
                .components()
                .iter()
                .map(|c| (c.mu, c.sigma2.sqrt()))
                .collect();
            let mut obs = Vec::with_capacity(t);
            for step in 0..t {
                if step > 0 {
                    state = draw_categorical(&trans[state], &mut rng);
                }
                states.push(state);
                let z: f64 = rng.sample(StandardNormal);
                let (mu, sd) = params[state];
                obs.push(mu + sd * z);
            }
            Ok(SampledPath {
                states,
                observations: Observations::Continuous(obs),
            })
        }
    }
}

/// Stationarity and mixing constants of a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityDiagnostics {
    pub pi: Vec<f64>,
    /// `|lambda_2(A)|`, the mixing-rate proxy; the geometric-ergodicity constants are not computed.
    pub second_eigenvalue_modulus: f64,
    /// `a_0 = min_k pi_k`.
    pub min_pi: f64,
    /// `a_1 = min_k (B pi)_k`, discrete outputs only.
    pub min_rho: Option<f64>,
    /// `L = max_i sup_y f_i(y)`, Gaussian outputs only.
    pub density_bound: Option<f64>,
}

pub fn ergodicity_diagnostics(spec: &HmmSpec) -> Result<ErgodicityDiagnostics> {
    let pi = stationary_distribution(&spec.a)?;
    let second = subdominant_moduli(&spec.a).first().copied().unwrap_or(0.0);
    let min_pi = pi.min();
    let (min_rho, density_bound) = match &spec.outputs {
        OutputModel::Discrete(d) => (Some((d.b() * &pi).min()), None),
        OutputModel::Gaussian(g) => (None, Some(g.density_bound())),
    };
    Ok(ErgodicityDiagnostics {
        pi: pi.iter().copied().collect(),
        second_eigenvalue_modulus: second,
        min_pi,
        min_rho,
        density_bound,
    })
}

// ---- model-file schema ----

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum OutputsFile {
    Discrete {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
    Gaussian {
        components: Vec<GaussianComponent>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    n: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    outputs: OutputModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<f64>>,
}

impl TryFrom<OutputsFile> for OutputModel {
    type Error = Error;

    fn try_from(f: OutputsFile) -> Result<Self> {
        match f {
            OutputsFile::Discrete { b } => Ok(OutputModel::Discrete(DiscreteOutputModel::new(
                matrix_from_rows(&b)?,
            )?)),
            OutputsFile::Gaussian { components } => Ok(OutputModel::Gaussian(
                GaussianOutputModel::new(components)?,
            )),
        }
    }
}

impl From<&OutputModel> for OutputsFile {
    fn from(m: &OutputModel) -> Self {
        match m {
            OutputModel::Discrete(d) => OutputsFile::Discrete {
                b: matrix_to_rows(d.b()),
            },
            OutputModel::Gaussian(g) => OutputsFile::Gaussian {
                components: g.components().to_vec(),
            },
        }
    }
}

impl Serialize for OutputModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OutputsFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutputModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = OutputsFile::deserialize(d)?;
        OutputModel::try_from(f).map_err(serde::de::Error::custom)
    }
}

impl Serialize for HmmSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelFile {
            n: self.n(),
            a: self.a.to_rows(),
            outputs: self.outputs.clone(),
            initial: self.initial.as_ref().map(|p| p.iter().copied().collect()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HmmSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = ModelFile::deserialize(d)?;
        let a = TransitionMatrix::from_rows(&f.a).map_err(D::Error::custom)?;
        if a.n() != f.n {
            return Err(D::Error::custom(format!(
                "\"n\" is {} but A is {}x{}",
                f.n,
                a.n(),
                a.n()
            )));
        }
        HmmSpec::new(a, f.outputs, f.initial.map(DVector::from_vec)).map_err(D::Error::custom)
    }
}

/// Built-in reference models.
pub mod builtin {
    use super::*;

    /// Four-state Gaussian toy model used throughout the benchmarks.
    pub fn toy_gaussian() -> HmmSpec {
        let a = TransitionMatrix::from_rows(&[
            vec![0.7, 0.0, 0.2, 0.5],
            vec![0.2, 0.6, 0.2, 0.0],
            vec![0.1, 0.2, 0.6, 0.0],
            vec![0.0, 0.2, 0.0, 0.5],
        ])
        .expect("valid toy transition matrix");
        let outputs = GaussianOutputModel::new(vec![
            GaussianComponent::new(-4.0, 4.0),
            GaussianComponent::new(0.0, 1.0),
            GaussianComponent::new(2.0, 36.0),
            GaussianComponent::new(4.0, 1.0),
        ])
        .expect("valid toy components");
        HmmSpec::new(a, OutputModel::Gaussian(outputs), None).expect("coherent toy model")
    }

    /// The toy transition matrix paired with a 6-symbol emission matrix.
    pub fn toy_discrete() -> HmmSpec {
        let a = toy_gaussian().a;
        let b = matrix_from_rows(&[
            vec![0.50, 0.10, 0.05, 0.05],
            vec![0.25, 0.10, 0.10, 0.05],
            vec![0.10, 0.50, 0.10, 0.05],
            vec![0.05, 0.20, 0.45, 0.10],
            vec![0.05, 0.05, 0.20, 0.25],
            vec![0.05, 0.05, 0.10, 0.50],
        ])
        .expect("rectangular");
        let outputs = DiscreteOutputModel::new(b).expect("valid toy emissions");
        HmmSpec::new(a, OutputModel::Discrete(outputs), None).expect("coherent toy model")
    }

    /// Two states, two symbols.
    pub fn two_state_discrete() -> HmmSpec {
        let a = TransitionMatrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.8]])
            .expect("valid transition matrix");
        let b = matrix_from_rows(&[vec![0.8, 0.3], vec![0.2, 0.7]]).expect("rectangular");
        HmmSpec::new(
            a,
            OutputModel::Discrete(DiscreteOutputModel::new(b).expect("valid emissions")),
            None,
        )
        .expect("coherent model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tm(rows: &[Vec<f64>]) -> TransitionMatrix {
        TransitionMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn toy_stationary_matches_reported_values() {
        let pi = stationary_distribution(&builtin::toy_gaussian().a).unwrap();
        let expected = [0.3529, 0.2941, 0.2353, 0.1176];
        for (p, e) in pi.iter().zip(expected) {
            assert_abs_diff_eq!(*p, e, epsilon = 5e-5);
        }
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let pi = stationary_distribution(&tm(&[vec![0.5, 0.5], vec![0.5, 0.5]])).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn two_state_balance() {
        // 0.1 * pi_1 = 0.2 * pi_2
        let pi = stationary_distribution(&tm(&[vec![0.9, 0.2], vec![0.1, 0.8]])).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let a = TransitionMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(
            stationary_distribution(&a),
            Err(Error::NonUniqueStationary)
        ));
    }

    #[test]
    fn periodic_chain_has_unique_stationary() {
        let pi = stationary_distribution(&tm(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_stochastic_columns() {
        assert!(TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![0.4, 0.5]]).is_err());
        assert!(TransitionMatrix::from_rows(&[vec![1.2, 0.5], vec![-0.2, 0.5]]).is_err());
    }

    #[test]
    fn rejects_duplicate_gaussians() {
        let c = GaussianComponent::new(1.0, 2.0);
        assert!(GaussianOutputModel::new(vec![c, c]).is_err());
        assert!(GaussianOutputModel::new(vec![GaussianComponent::new(0.0, 0.0)]).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let a = tm(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let g = GaussianOutputModel::new(vec![GaussianComponent::new(0.0, 1.0)]).unwrap();
        assert!(HmmSpec::new(a.clone(), OutputModel::Gaussian(g.clone()), None).is_err());
        let g2 = GaussianOutputModel::new(vec![
            GaussianComponent::new(0.0, 1.0),
            GaussianComponent::new(1.0, 1.0),
        ])
        .unwrap();
        let bad_init = Some(DVector::from_vec(vec![0.7, 0.7]));
        assert!(HmmSpec::new(a, OutputModel::Gaussian(g2), bad_init).is_err());
    }

    #[test]
    fn alternating_chain_is_deterministic() {
        let a = tm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let g = GaussianOutputModel::new(vec![
            GaussianComponent::new(0.0, 1.0),
            GaussianComponent::new(5.0, 1.0),
        ])
        .unwrap();
        let spec = HmmSpec::new(
            a,
            OutputModel::Gaussian(g),
            Some(DVector::from_vec(vec![1.0, 0.0])),
        )
        .unwrap();
        let path = sample(&spec, 4, 11).unwrap();
        assert_eq!(path.states, vec![0, 1, 0, 1]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = builtin::toy_gaussian();
        assert_eq!(sample(&spec, 500, 3).unwrap(), sample(&spec, 500, 3).unwrap());
        assert_ne!(sample(&spec, 500, 3).unwrap(), sample(&spec, 500, 4).unwrap());
        let d = builtin::toy_discrete();
        assert_eq!(sample(&d, 500, 3).unwrap(), sample(&d, 500, 3).unwrap());
    }

    #[test]
    fn zero_length_sample_is_an_error() {
        assert!(sample(&builtin::toy_gaussian(), 0, 1).is_err());
    }

    #[test]
    fn diagnostics_constants() {
        let d = ergodicity_diagnostics(&builtin::toy_gaussian()).unwrap();
        assert_abs_diff_eq!(d.min_pi, 0.1176, epsilon = 5e-5);
        assert!(d.min_rho.is_none());
        assert!(d.second_eigenvalue_modulus < 1.0 && d.second_eigenvalue_modulus > 0.0);

        let unit = GaussianOutputModel::new(vec![
            GaussianComponent::new(0.0, 1.0),
            GaussianComponent::new(3.0, 1.0),
        ])
        .unwrap();
        let spec = HmmSpec::new(
            tm(&[vec![0.5, 0.5], vec![0.5, 0.5]]),
            OutputModel::Gaussian(unit),
            None,
        )
        .unwrap();
        let d = ergodicity_diagnostics(&spec).unwrap();
        assert_abs_diff_eq!(d.density_bound.unwrap(), 0.398_942_280_4, epsilon = 1e-9);
        assert_abs_diff_eq!(d.second_eigenvalue_modulus, 0.0, epsilon = 1e-12);

        let d = ergodicity_diagnostics(&builtin::two_state_discrete()).unwrap();
        // rho = B pi = (0.6333.., 0.3666..)
        assert_abs_diff_eq!(d.min_rho.unwrap(), 0.2 * 2.0 / 3.0 + 0.7 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.second_eigenvalue_modulus, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn model_file_round_trip() {
        for spec in [builtin::toy_gaussian(), builtin::toy_discrete()] {
            let back = HmmSpec::from_json(&spec.to_json()).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn model_file_schema() {
        let text = r#"{
            "n": 2,
            "A": [[0.9, 0.2], [0.1, 0.8]],
            "outputs": {"type": "gaussian", "components": [{"mu": 0.0, "sigma2": 1.0}, {"mu": 3.0, "sigma2": 2.0}]},
            "initial": [1.0, 0.0]
        }"#;
        let spec = HmmSpec::from_json(text).unwrap();
        assert_eq!(spec.a.matrix()[(1, 0)], 0.1);
        assert_eq!(spec.initial.as_ref().unwrap()[0], 1.0);

        let wrong_n = text.replace("\"n\": 2", "\"n\": 3");
        assert!(HmmSpec::from_json(&wrong_n).is_err());
        let bad_type = text.replace("gaussian", "poisson");
        assert!(HmmSpec::from_json(&bad_type).is_err());
    }

    #[test]
    fn relabel_permutes_stationary_vector() {
        let a = builtin::toy_gaussian().a;
        let perm = [2, 0, 3, 1];
        let pi = stationary_distribution(&a).unwrap();
        let pi_perm = stationary_distribution(&a.relabel(&perm)).unwrap();
        assert!((relabel_vector(&pi, &perm) - pi_perm).amax() < 1e-10);
    }
}
