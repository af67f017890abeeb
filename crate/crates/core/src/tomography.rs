//! Two-qubit state tomography from 16 projector settings.
//!
//! Setting order (first letter arm 0, second letter arm 1):
//! `HH HV VH VV HD HR VD VR DH DV RH RV DD DR RD RR` with `H = |0⟩`,
//! `V = |1⟩`, `D = (|0⟩ + |1⟩)/√2`, `R = (|0⟩ - i|1⟩)/√2`.

use std::path::Path;

use nalgebra::{SMatrix, SVector};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::detection::{scan_ket, stream_rng, CountRecord, ProjectorSetting, ScanBasis};
use crate::error::{Error, Result};
use crate::linalg::{self, c, kron_ket, pauli, Ket2, Ket4, Mat4};
use crate::metrics::{self, bell_target};
use crate::state::{DensityMatrix, Labeling};

pub const SETTING_COUNT: usize = 16;
const LABELS: [&str; SETTING_COUNT] = [
    "HH", "HV", "VH", "VV", "HD", "HR", "VD", "VR", "DH", "DV", "RH", "RV", "DD", "DR", "RD", "RR",
];

pub fn single_qubit_ket(letter: char) -> Result<Ket2> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(match letter {
        'H' => Ket2::new(c(1.0, 0.0), c(0.0, 0.0)),
        'V' => Ket2::new(c(0.0, 0.0), c(1.0, 0.0)),
        'D' => Ket2::new(c(h, 0.0), c(h, 0.0)),
        'A' => Ket2::new(c(h, 0.0), c(-h, 0.0)),
        'R' => Ket2::new(c(h, 0.0), c(0.0, -h)),
        'L' => Ket2::new(c(h, 0.0), c(0.0, h)),
        other => return Err(Error::Config(format!("unknown analyzer state '{other}'"))),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographySetting {
    /// 1-based.
    pub index: usize,
    pub label: String,
    pub kets: [Ket2; 2],
}

impl TomographySetting {
    pub fn ket(&self) -> Ket4 {
        kron_ket(&self.kets[0], &self.kets[1])
    }

    pub fn operator(&self) -> Mat4 {
        linalg::projector(&self.ket())
    }

    pub fn projector_setting(&self) -> ProjectorSetting {
        ProjectorSetting::from_kets(self.label.clone(), self.kets[0], self.kets[1])
            .expect("catalog kets are normalized")
    }
}

pub fn projector_catalog() -> Vec<TomographySetting> {
    LABELS
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut ch = l.chars();
            let a = single_qubit_ket(ch.next().unwrap()).unwrap();
            let b = single_qubit_ket(ch.next().unwrap()).unwrap();
            TomographySetting {
                index: i + 1,
                label: l.to_string(),
                kets: [a, b],
            }
        })
        .collect()
}

type Mat16 = SMatrix<f64, 16, 16>;
type Vec16 = SVector<f64, 16>;

/// `A[k, j] = Tr(M_k (σ_a ⊗ σ_b)) / 4` with `j = 4a + b`.
fn design_matrix(catalog: &[TomographySetting]) -> Mat16 {
    let paulis: Vec<Mat4> = (0..16).map(|j| linalg::kron(&pauli(j / 4), &pauli(j % 4))).collect();
    Mat16::from_fn(|k, j| 0.25 * (catalog[k].operator() * paulis[j]).trace().re)
}

/// Condition number of the catalog's design matrix.
pub fn catalog_condition_number() -> f64 {
    let sv = design_matrix(&projector_catalog()).singular_values();
    sv.max() / sv.min()
}

/// Counts and emitted pairs per catalog setting, in catalog order.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyCounts {
    pub labeling: Labeling,
    pub observed: [f64; SETTING_COUNT],
    pub pairs: [f64; SETTING_COUNT],
}

impl TomographyCounts {
    pub fn new(labeling: Labeling, observed: [f64; SETTING_COUNT], pairs: [f64; SETTING_COUNT]) -> Result<Self> {
        for k in 0..SETTING_COUNT {
            if !(observed[k] >= 0.0) || !observed[k].is_finite() {
                return Err(Error::Validation(format!(
                    "setting {}: counts {} must be finite and non-negative",
                    k + 1,
                    observed[k]
                )));
            }
            if !(pairs[k] > 0.0) {
                return Err(Error::Validation(format!("setting {}: pairs must be positive", k + 1)));
            }
        }
        Ok(TomographyCounts {
            labeling,
            observed,
            pairs,
        })
    }

    /// Collects one record per catalog index. Missing indices are reported.
    pub fn from_records(records: &[CountRecord], labeling: Labeling) -> Result<Self> {
        let mut observed = [f64::NAN; SETTING_COUNT];
        let mut pairs = [0.0; SETTING_COUNT];
        for r in records {
            if !(1..=SETTING_COUNT).contains(&r.setting_index) {
                return Err(Error::Validation(format!(
                    "setting index {} outside 1..={SETTING_COUNT}",
                    r.setting_index
                )));
            }
            let k = r.setting_index - 1;
            if !observed[k].is_nan() {
                return Err(Error::Validation(format!("setting {} appears twice", r.setting_index)));
            }
            observed[k] = r.observed();
            pairs[k] = r.pairs_emitted as f64;
        }
        if let Some(k) = observed.iter().position(|v| v.is_nan()) {
            return Err(Error::IncompleteCoverage(k + 1));
        }
        TomographyCounts::new(labeling, observed, pairs)
    }

    pub fn total(&self) -> f64 {
        self.observed.iter().sum()
    }

    fn frequencies(&self) -> Vec16 {
        Vec16::from_fn(|k, _| self.observed[k] / self.pairs[k])
    }
}

/// Unconstrained least-squares estimate; may have negative eigenvalues.
pub fn linear_inversion(counts: &TomographyCounts) -> Result<DensityMatrix> {
    if counts.total() <= 0.0 {
        return Err(Error::Normalization("all tomography counts are zero".into()));
    }
    let a = design_matrix(&projector_catalog());
    let r = a
        .lu()
        .solve(&counts.frequencies())
        .ok_or_else(|| Error::Numerical("tomography design matrix is singular".into()))?;
    let trace = r[0];
    if !(trace > 0.0) {
        return Err(Error::Normalization(format!("reconstructed trace {trace:.3e} is not positive")));
    }
    let mut m = Mat4::zeros();
    for j in 0..16 {
        m += linalg::kron(&pauli(j / 4), &pauli(j % 4)).scale(0.25 * r[j] / trace);
    }
    let m = (m + m.adjoint()).scale(0.5);
    DensityMatrix::new(m, counts.labeling.basis_labels())
}

/// How the pairs-per-setting scale enters the likelihood.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Mean counts are `N_k p_k` with `N_k` from the records.
    Known,
    /// Mean counts are `ν N_k p_k` with the overall efficiency ν profiled out.
    /// Needed whenever coincidences are post-selected or data are external.
    #[default]
    Fitted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step raises the log-likelihood by less than this.
    pub tolerance: f64,
    pub normalization: Normalization,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iterations: 20_000,
            tolerance: 1e-10,
            normalization: Normalization::Fitted,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub rho: DensityMatrix,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    /// Fitted (or known, = 1) overall efficiency.
    pub scale: f64,
}

struct Likelihood<'a> {
    counts: &'a TomographyCounts,
    ops: Vec<Mat4>,
    kets: Vec<Ket4>,
    normalization: Normalization,
}

impl<'a> Likelihood<'a> {
    fn new(counts: &'a TomographyCounts, normalization: Normalization) -> Self {
        let cat = projector_catalog();
        Likelihood {
            counts,
            ops: cat.iter().map(|s| s.operator()).collect(),
            kets: cat.iter().map(|s| s.ket()).collect(),
            normalization,
        }
    }

    fn probabilities(&self, rho: &Mat4) -> [f64; SETTING_COUNT] {
        let mut p = [0.0; SETTING_COUNT];
        for (pk, k) in p.iter_mut().zip(&self.kets) {
            *pk = (k.adjoint() * rho * k)[(0, 0)].re.max(0.0);
        }
        p
    }

    fn scale(&self, p: &[f64; SETTING_COUNT]) -> f64 {
        match self.normalization {
            Normalization::Known => 1.0,
            Normalization::Fitted => {
                let expected: f64 = p.iter().zip(&self.counts.pairs).map(|(p, n)| p * n).sum();
                if expected > 0.0 {
                    self.counts.total() / expected
                } else {
                    1.0
                }
            }
        }
    }

    fn value(&self, rho: &Mat4) -> f64 {
        let p = self.probabilities(rho);
        let nu = self.scale(&p);
        let mut l = 0.0;
        for k in 0..SETTING_COUNT {
            let mu = nu * self.counts.pairs[k] * p[k];
            let n = self.counts.observed[k];
            if n > 0.0 {
                if mu <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                l += n * mu.ln();
            }
            l -= mu;
        }
        l
    }

    /// `∂L/∂ρ` (Hermitian), valid for the profiled scale as well.
    fn gradient(&self, rho: &Mat4) -> Mat4 {
        let p = self.probabilities(rho);
        let nu = self.scale(&p);
        let mut g = Mat4::zeros();
        for k in 0..SETTING_COUNT {
            let n = self.counts.observed[k];
            let mut w = -nu * self.counts.pairs[k];
            if n > 0.0 {
                w += n / p[k].max(1e-300);
            }
            g += self.ops[k].scale(w);
        }
        g
    }
}

fn rho_from_t(t: &Mat4) -> Mat4 {
    let m = t.adjoint() * t;
    let tr = linalg::real_trace(&m);
    let m = m.unscale(tr);
    (m + m.adjoint()).scale(0.5)
}

/// Gradient of `L(ρ(T))` with respect to a general complex `T`.
///
/// `T` is not restricted to triangular form: a step `T → T + ε g` is then
/// `T (1 + ε' G)`, the diluted `RρR` update, which drives vanishing
/// eigen-directions to zero geometrically. A triangular gauge is only fixed
/// for the starting factor.
fn t_gradient(lik: &Likelihood, t: &Mat4) -> Mat4 {
    let rho = rho_from_t(t);
    let g = lik.gradient(&rho);
    let shifted = g - Mat4::identity() * (g * rho).trace();
    let tr = linalg::real_trace(&(t.adjoint() * t));
    (t * shifted).scale(2.0 / tr)
}

/// Lower-triangular `T` with `T†T = ρ` for positive definite `ρ`.
fn factor(rho: &Mat4) -> Result<Mat4> {
    let rev = Mat4::from_fn(|i, j| rho[(3 - i, 3 - j)]);
    let chol = rev
        .cholesky()
        .ok_or_else(|| Error::Numerical("initial state is not positive definite".into()))?;
    let l = chol.l();
    let upper = Mat4::from_fn(|i, j| l[(3 - i, 3 - j)]);
    Ok(upper.adjoint())
}

fn inner(a: &Mat4, b: &Mat4) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Maximum-likelihood estimate under Poisson statistics.
pub fn mle_reconstruct(counts: &TomographyCounts, options: &MleOptions) -> Result<MleResult> {
    let initial = linear_inversion(counts)?;
    let lik = Likelihood::new(counts, options.normalization);
    // Likelihood is flat to second order in some directions around the
    // optimum, so the start must already be close: mix in only a trace of I.
    let delta = 1e-10;
    let start = linalg::project_psd(initial.entries()).scale(1.0 - delta) + Mat4::identity().scale(delta / 4.0);
    let mut t = factor(&start)?;
    let mut value = lik.value(&rho_from_t(&t));
    let initial_value = value;
    let mut trace = vec![value];
    let mut grad = t_gradient(&lik, &t);
    let mut step = 1.0 / (1.0 + grad.norm());
    let mut prev: Option<(Mat4, Mat4)> = None;

    for iteration in 1..=options.max_iterations {
        if let Some((dt, dg)) = &prev {
            let curvature = inner(dt, dg).abs();
            if curvature > 0.0 {
                step = (inner(dt, dt) / curvature).clamp(1e-12, 1e6);
            }
        }
        let g2 = inner(&grad, &grad);
        if g2 == 0.0 {
            return finish(&lik, &t, value, initial_value, iteration, counts.labeling);
        }
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = t + grad.scale(step);
            let v = lik.value(&rho_from_t(&candidate));
            if v.is_finite() && v >= value + 1e-4 * step * g2 {
                accepted = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        let Some((next, next_value)) = accepted else {
            // No ascent step exists at machine precision: stationary point.
            return finish(&lik, &t, value, initial_value, iteration, counts.labeling);
        };
        let gain = next_value - value;
        // Renormalize T so its scale stays near one.
        let scale = linalg::real_trace(&(next.adjoint() * next)).sqrt();
        let next = next.unscale(scale);
        let next_grad = t_gradient(&lik, &next);
        prev = Some((next - t, (next_grad - grad).scale(-1.0)));
        t = next;
        grad = next_grad;
        value = next_value;
        trace.push(value);
        if gain < options.tolerance {
            return finish(&lik, &t, value, initial_value, iteration, counts.labeling);
        }
    }
    let rho = DensityMatrix::new(rho_from_t(&t), counts.labeling.basis_labels())?;
    Err(Error::NonConvergence {
        iterations: options.max_iterations,
        best: Box::new(rho),
        log_likelihood_trace: trace,
    })
}

fn finish(
    lik: &Likelihood,
    t: &Mat4,
    value: f64,
    initial: f64,
    iterations: usize,
    labeling: Labeling,
) -> Result<MleResult> {
    let rho_m = rho_from_t(t);
    let scale = lik.scale(&lik.probabilities(&rho_m));
    Ok(MleResult {
        rho: DensityMatrix::new(rho_m, labeling.basis_labels())?,
        log_likelihood: value,
        initial_log_likelihood: initial,
        iterations,
        scale,
    })
}

/// Quantity evaluated on every resampled reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub enum Derived {
    Fidelity(Ket4),
    Concurrence,
    /// Visibility of the scan predicted by ρ on the given grid.
    Visibility { basis: ScanBasis, thetas_deg: Vec<f64> },
}

impl Derived {
    pub fn bell_fidelity() -> Self {
        Derived::Fidelity(bell_target())
    }

    pub fn evaluate(&self, rho: &DensityMatrix) -> Result<f64> {
        match self {
            Derived::Fidelity(t) => metrics::fidelity(rho, t),
            Derived::Concurrence => metrics::concurrence(rho),
            Derived::Visibility { basis, thetas_deg } => {
                let values = predicted_scan(rho, *basis, thetas_deg);
                Ok(metrics::visibility(thetas_deg, &values)?.visibility)
            }
        }
    }
}

/// Scan probabilities predicted by a reconstructed state.
pub fn predicted_scan(rho: &DensityMatrix, basis: ScanBasis, thetas_deg: &[f64]) -> Vec<f64> {
    thetas_deg
        .iter()
        .map(|&t| {
            let k = kron_ket(&scan_ket(t), &basis.reference_ket());
            (k.adjoint() * rho.entries() * k)[(0, 0)].re
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McSummary {
    /// One entry per requested derived quantity.
    pub stats: Vec<MeanStd>,
    pub resamples: usize,
    pub failures: usize,
}

pub const MIN_RESAMPLES: usize = 100;

/// Poisson bootstrap: each resample redraws every count as Poisson(observed)
/// from its own substream, reconstructs by MLE and evaluates `derived`.
/// Failed resamples are excluded and counted.
pub fn mc_error_bars(
    counts: &TomographyCounts,
    n_resamples: usize,
    seed: u64,
    derived: &[Derived],
    options: &MleOptions,
) -> Result<McSummary> {
    use rayon::prelude::*;
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Validation(format!(
            "mc_error_bars needs at least {MIN_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    let outcomes: Vec<Option<Vec<f64>>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| -> Option<Vec<f64>> {
            let mut rng = stream_rng(seed, r as u64);
            let mut observed = [0.0; SETTING_COUNT];
            for (o, &n) in observed.iter_mut().zip(&counts.observed) {
                *o = if n > 0.0 {
                    Poisson::new(n).ok()?.sample(&mut rng)
                } else {
                    0.0
                };
            }
            let data = TomographyCounts::new(counts.labeling, observed, counts.pairs).ok()?;
            let fit = mle_reconstruct(&data, options).ok()?;
            derived.iter().map(|d| d.evaluate(&fit.rho).ok()).collect()
        })
        .collect();
    let good: Vec<&Vec<f64>> = outcomes.iter().flatten().collect();
    let failures = n_resamples - good.len();
    if failures > 0 {
        log::warn!("{failures} of {n_resamples} resamples failed and were excluded");
    }
    if good.len() < 2 {
        return Err(Error::Numerical("fewer than two resamples succeeded".into()));
    }
    let n = good.len() as f64;
    let stats = (0..derived.len())
        .map(|j| {
            let mean = good.iter().map(|v| v[j]).sum::<f64>() / n;
            let var = good.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            MeanStd { mean, std: var.sqrt() }
        })
        .collect();
    Ok(McSummary {
        stats,
        resamples: n_resamples,
        failures,
    })
}

/// Reads `setting_index,n_counts,pairs[,seed]` rows into catalog records.
/// Integer counts are taken as sampled counts, fractional ones as
/// expectation values.
pub fn read_counts_csv(path: &Path) -> Result<Vec<CountRecord>> {
    #[derive(Deserialize)]
    struct Row {
        setting_index: usize,
        n_counts: String,
        pairs: u64,
        #[serde(default)]
        seed: Option<u64>,
    }
    let catalog = projector_catalog();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        if !(1..=SETTING_COUNT).contains(&row.setting_index) {
            return Err(Error::Validation(format!(
                "{}: setting index {} outside 1..={SETTING_COUNT}",
                path.display(),
                row.setting_index
            )));
        }
        let (counts, expected) = match row.n_counts.parse::<u64>() {
            Ok(n) => (Some(n), n as f64),
            Err(_) => {
                let v: f64 = row.n_counts.parse().map_err(|_| {
                    Error::Validation(format!(
                        "{}: n_counts '{}' is not a number",
                        path.display(),
                        row.n_counts
                    ))
                })?;
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Validation(format!("{}: negative count {v}", path.display())));
                }
                (None, v)
            }
        };
        if row.pairs == 0 {
            return Err(Error::Validation(format!(
                "{}: setting {} has zero pairs",
                path.display(),
                row.setting_index
            )));
        }
        out.push(CountRecord {
            setting_index: row.setting_index,
            setting: catalog[row.setting_index - 1].projector_setting(),
            expected,
            counts,
            pairs_emitted: row.pairs,
            seed: row.seed.unwrap_or(0),
        });
    }
    Ok(out)
}

pub fn write_counts_csv(path: &Path, records: &[CountRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["setting_index", "n_counts", "pairs", "seed"])?;
    for r in records {
        let n = match r.counts {
            Some(n) => n.to_string(),
            None => r.expected.to_string(),
        };
        w.write_record([
            r.setting_index.to_string(),
            n,
            r.pairs_emitted.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Probabilities `Tr(M_k ρ)` for the catalog.
pub fn catalog_probabilities(rho: &Mat4) -> [f64; SETTING_COUNT] {
    let mut p = [0.0; SETTING_COUNT];
    for (pk, s) in p.iter_mut().zip(projector_catalog()) {
        let k = s.ket();
        *pk = (k.adjoint() * rho * k)[(0, 0)].re;
    }
    p
}

/// Counts equal to `pairs × Tr(M_k ρ)`.
pub fn exact_counts(rho: &DensityMatrix, pairs: f64) -> Result<TomographyCounts> {
    let p = catalog_probabilities(rho.entries());
    let labeling = if rho.basis_labels()[1] == "SI" {
        Labeling::ByPolarization
    } else {
        Labeling::ByPath
    };
    TomographyCounts::new(labeling, p.map(|v| v.max(0.0) * pairs), [pairs; SETTING_COUNT])
}
