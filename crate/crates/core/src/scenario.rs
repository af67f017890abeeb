//! Scenario configuration, the experiment pipelines and the output bundle.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::detection::{
    correlation_scan, measure_settings, write_scan_csv, CountRecord, DetectorModel, Sampling, ScanBasis,
    ScanTable, Station,
};
use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::metrics::{self, bell_target, ErrorBars, MetricsReport};
use crate::optics::Bench;
use crate::source::{
    make_pair_with_overlap, overlap, DistinguishabilityKnob, Imperfections, KnobMode, NoiseModel, SpectralModel,
};
use crate::state::{DensityMatrix, Ensemble, Labeling};
use crate::tomography::{
    linear_inversion, mc_error_bars, mle_reconstruct, predicted_scan, projector_catalog, read_counts_csv,
    write_counts_csv, Derived, MleOptions, MleResult, TomographyCounts,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Duality,
    #[serde(alias = "breakdown-frequency")]
    BreakdownFrequency,
    #[serde(alias = "breakdown-time")]
    BreakdownTime,
    #[serde(alias = "gamma-sweep")]
    GammaSweep,
    Ingest,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Duality => "duality",
            ScenarioKind::BreakdownFrequency => "breakdown_frequency",
            ScenarioKind::BreakdownTime => "breakdown_time",
            ScenarioKind::GammaSweep => "gamma_sweep",
            ScenarioKind::Ingest => "ingest",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.replace('-', "_").as_str() {
            "duality" => Ok(ScenarioKind::Duality),
            "breakdown_frequency" => Ok(ScenarioKind::BreakdownFrequency),
            "breakdown_time" => Ok(ScenarioKind::BreakdownTime),
            "gamma_sweep" => Ok(ScenarioKind::GammaSweep),
            "ingest" => Ok(ScenarioKind::Ingest),
            other => Err(Error::Config(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub spectral: SpectralModel,
    /// Named imperfection profile (`ideal` or `paper2014`).
    pub noise_profile: String,
    /// Replaces the profile's source noise when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_overlap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compensator_offset_deg: Option<f64>,
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig {
            spectral: SpectralModel::default(),
            noise_profile: "ideal".into(),
            noise: None,
            residual_overlap: None,
            compensator_offset_deg: None,
        }
    }
}

impl SourceConfig {
    pub fn imperfections(&self) -> Result<Imperfections> {
        let mut imp = Imperfections::profile(&self.noise_profile)?;
        if let Some(n) = self.noise {
            imp.noise = n;
        }
        if let Some(r) = self.residual_overlap {
            imp.residual_overlap = r;
        }
        if let Some(d) = self.compensator_offset_deg {
            imp.compensator_offset_deg = d;
        }
        imp.validate()?;
        Ok(imp)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchPresets {
    /// Preset name or path to a bench JSON file.
    pub polarization: String,
    pub path: String,
}

impl Default for BenchPresets {
    fn default() -> Self {
        BenchPresets {
            polarization: "fig2_polarization".into(),
            path: "fig2_path".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub thetas_deg: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            thetas_deg: (0..=18).map(|k| 10.0 * k as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub duality_min_concurrence: f64,
    /// Largest |γ| a breakdown run accepts as distinguishable.
    pub breakdown_max_overlap: f64,
    pub breakdown_max_path_concurrence: f64,
    /// Used instead of the above in exact mode.
    pub breakdown_max_path_concurrence_exact: f64,
    pub breakdown_max_visibility: f64,
    /// Allowed change of C_pol between the breakdown run and γ = 1.
    pub breakdown_max_pol_concurrence_shift: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            duality_min_concurrence: 0.8,
            breakdown_max_overlap: 0.01,
            breakdown_max_path_concurrence: 0.01,
            breakdown_max_path_concurrence_exact: 1e-9,
            breakdown_max_visibility: 0.02,
            breakdown_max_pol_concurrence_shift: 0.005,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_polarization: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_path: Option<PathBuf>,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_pairs() -> u64 {
    400_000
}

fn default_resamples() -> usize {
    200
}

fn default_seed() -> u64 {
    2014
}

fn default_gamma_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("dualbench-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub knob: DistinguishabilityKnob,
    #[serde(default = "default_pairs")]
    pub pairs_per_setting: u64,
    /// 0 disables Monte-Carlo error bars.
    #[serde(default = "default_resamples")]
    pub mc_resamples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub bench_presets: BenchPresets,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default)]
    pub mle: MleOptions,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            scenario,
            source: SourceConfig::default(),
            knob: DistinguishabilityKnob::default(),
            pairs_per_setting: default_pairs(),
            mc_resamples: default_resamples(),
            seed: default_seed(),
            exact: false,
            bench_presets: BenchPresets::default(),
            scan: ScanConfig::default(),
            thresholds: Thresholds::default(),
            gamma_grid: default_gamma_grid(),
            mle: MleOptions::default(),
            detector: DetectorModel::default(),
            ingest: IngestConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid scenario config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.pairs_per_setting == 0 {
            return Err(Error::Config("pairs_per_setting must be positive".into()));
        }
        if self.mc_resamples != 0 && self.mc_resamples < crate::tomography::MIN_RESAMPLES {
            return Err(Error::Config(format!(
                "mc_resamples must be 0 or at least {}",
                crate::tomography::MIN_RESAMPLES
            )));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Config("gamma_grid must be a non-empty list of values in [0, 1]".into()));
        }
        let t = &self.scan.thetas_deg;
        let span = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - t.iter().cloned().fold(f64::INFINITY, f64::min);
        if t.len() < 8 || span < 90.0 {
            return Err(Error::Config("scan needs at least 8 angles spanning 90 degrees or more".into()));
        }
        if !(self.mle.tolerance > 0.0) || self.mle.max_iterations == 0 {
            return Err(Error::Config("mle tolerance and max_iterations must be positive".into()));
        }
        self.detector.validate()?;
        self.source.spectral.validate()?;
        self.source.imperfections()?;
        self.knob.validate()?;
        if self.scenario != ScenarioKind::Ingest {
            Bench::load(&self.bench_presets.polarization)?;
            Bench::load(&self.bench_presets.path)?;
        }
        Ok(())
    }

    /// Knob overlap times the profile's residual overlap.
    pub fn effective_overlap(&self) -> Result<C64> {
        let imp = self.source.imperfections()?;
        Ok(overlap(&self.source.spectral, &self.knob)? * imp.residual_overlap)
    }
}

/// Pass/fail record for one scenario assertion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            relation: "<=".into(),
            passed: value <= threshold,
        }
    }

    fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            relation: ">=".into(),
            passed: value >= threshold,
        }
    }
}

/// Tomography, scans and metrics for one labeling.
#[derive(Clone, Debug)]
pub struct LabelingRun {
    pub labeling: Labeling,
    pub records: Vec<CountRecord>,
    pub linear: DensityMatrix,
    pub mle: MleResult,
    pub scans: Option<[ScanTable; 2]>,
    pub metrics: MetricsReport,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub gamma_effective: f64,
    pub c_path: f64,
    pub c_pol: f64,
    pub visibility_x: f64,
}

#[derive(Clone, Debug)]
pub struct RunBundle {
    pub config: ScenarioConfig,
    pub overlap: Option<C64>,
    pub runs: Vec<LabelingRun>,
    pub sweep: Vec<SweepRow>,
    pub checks: Vec<Check>,
    /// Wall-clock seconds; only written to the log.
    pub elapsed_s: f64,
}

impl RunBundle {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn run(&self, labeling: Labeling) -> Option<&LabelingRun> {
        self.runs.iter().find(|r| r.labeling == labeling)
    }
}

fn domain(l: Labeling) -> u64 {
    match l {
        Labeling::ByPath => 0,
        Labeling::ByPolarization => 1,
    }
}

const TOMOGRAPHY_STREAM: u64 = 0;
const SCAN_Z_STREAM: u64 = 1_000;
const SCAN_X_STREAM: u64 = 2_000;

fn sampling(cfg: &ScenarioConfig, labeling: Labeling, offset: u64) -> Sampling {
    if cfg.exact {
        Sampling::Exact
    } else {
        Sampling::Poisson {
            seed: cfg.seed,
            stream_base: domain(labeling) * 1_000_000 + offset,
        }
    }
}

fn mc_seed(seed: u64, labeling: Labeling) -> u64 {
    seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(domain(labeling) + 1))
}

fn stations(cfg: &ScenarioConfig, imp: &Imperfections) -> Result<(Station, Station)> {
    let pol = Bench::load(&cfg.bench_presets.polarization)?;
    let path = Bench::load(&cfg.bench_presets.path)?;
    let mut actual = path.clone();
    if imp.compensator_offset_deg != 0.0 {
        let k = actual.element_index("COMP").map_err(|_| {
            Error::Config("a compensator offset needs an element named COMP on the path bench".into())
        })?;
        actual.elements[k].phase += imp.compensator_offset_deg.to_radians();
    }
    Ok((Station::ideal(pol)?, Station::new(&path, actual)?))
}

fn error_bars(cfg: &ScenarioConfig, counts: &TomographyCounts, labeling: Labeling) -> Result<Option<ErrorBars>> {
    if cfg.exact || cfg.mc_resamples == 0 {
        return Ok(None);
    }
    let thetas = cfg.scan.thetas_deg.clone();
    let derived = [
        Derived::bell_fidelity(),
        Derived::Concurrence,
        Derived::Visibility {
            basis: ScanBasis::Z,
            thetas_deg: thetas.clone(),
        },
        Derived::Visibility {
            basis: ScanBasis::X,
            thetas_deg: thetas,
        },
    ];
    let mc = mc_error_bars(counts, cfg.mc_resamples, mc_seed(cfg.seed, labeling), &derived, &cfg.mle)?;
    Ok(Some(ErrorBars {
        fidelity: mc.stats[0].std,
        concurrence: mc.stats[1].std,
        visibility_z: mc.stats[2].std,
        visibility_x: mc.stats[3].std,
        failed_resamples: mc.failures,
        resamples: mc.resamples,
    }))
}

fn reconstruct(cfg: &ScenarioConfig, counts: &TomographyCounts) -> Result<(DensityMatrix, MleResult)> {
    let linear = linear_inversion(counts)?;
    if !linear.is_psd(0.0) {
        log::info!(
            "{} linear inversion is not positive (min eigenvalue {:.3e})",
            counts.labeling,
            linear.min_eigenvalue()
        );
    }
    let mle = mle_reconstruct(counts, &cfg.mle)?;
    Ok((linear, mle))
}

/// Tomography and Z/X scans of one labeling on one station.
pub fn measure_labeling(
    cfg: &ScenarioConfig,
    state: &Ensemble,
    station: &Station,
    with_error_bars: bool,
) -> Result<LabelingRun> {
    let labeling = station.labeling();
    let settings: Vec<_> = projector_catalog().iter().map(|s| s.projector_setting()).collect();
    let records = measure_settings(
        state,
        station,
        &settings,
        cfg.pairs_per_setting,
        &cfg.detector,
        sampling(cfg, labeling, TOMOGRAPHY_STREAM),
    )?;
    let counts = TomographyCounts::from_records(&records, labeling)?;
    let (linear, mle) = reconstruct(cfg, &counts)?;
    let thetas = &cfg.scan.thetas_deg;
    let z = correlation_scan(
        state,
        station,
        ScanBasis::Z,
        thetas,
        cfg.pairs_per_setting,
        sampling(cfg, labeling, SCAN_Z_STREAM),
    )?;
    let x = correlation_scan(
        state,
        station,
        ScanBasis::X,
        thetas,
        cfg.pairs_per_setting,
        sampling(cfg, labeling, SCAN_X_STREAM),
    )?;
    let errors = if with_error_bars {
        error_bars(cfg, &counts, labeling)?
    } else {
        None
    };
    let metrics = MetricsReport {
        fidelity: metrics::fidelity(&mle.rho, &bell_target())?,
        concurrence: metrics::concurrence(&mle.rho)?,
        visibility_z: metrics::visibility(thetas, &z.observed())?.visibility,
        visibility_x: metrics::visibility(thetas, &x.observed())?.visibility,
        errors,
    };
    Ok(LabelingRun {
        labeling,
        records,
        linear,
        mle,
        scans: Some([z, x]),
        metrics,
        seed: cfg.seed,
    })
}

fn source_state(gamma: C64, imp: &Imperfections) -> Result<Ensemble> {
    make_pair_with_overlap(gamma, &imp.noise)
}

fn both_labelings(cfg: &ScenarioConfig, gamma: C64, with_error_bars: bool) -> Result<Vec<LabelingRun>> {
    let imp = cfg.source.imperfections()?;
    let (pol, path) = stations(cfg, &imp)?;
    let state = source_state(gamma, &imp)?;
    Ok(vec![
        measure_labeling(cfg, &state, &pol, with_error_bars)?,
        measure_labeling(cfg, &state, &path, with_error_bars)?,
    ])
}

pub fn run_duality(cfg: &ScenarioConfig) -> Result<RunBundle> {
    let start = Instant::now();
    cfg.validate()?;
    let gamma = cfg.effective_overlap()?;
    if cfg.knob.mode != KnobMode::None && (overlap(&cfg.source.spectral, &cfg.knob)?.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::Config("the duality scenario needs indistinguishable photons (knob mode none)".into()));
    }
    let runs = both_labelings(cfg, gamma, true)?;
    let th = cfg.thresholds.duality_min_concurrence;
    let checks = vec![
        Check::at_least("polarization_concurrence", runs[0].metrics.concurrence, th),
        Check::at_least("path_concurrence", runs[1].metrics.concurrence, th),
    ];
    Ok(RunBundle {
        config: cfg.clone(),
        overlap: Some(gamma),
        runs,
        sweep: Vec::new(),
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run_breakdown(cfg: &ScenarioConfig) -> Result<RunBundle> {
    let start = Instant::now();
    cfg.validate()?;
    let wanted = match cfg.scenario {
        ScenarioKind::BreakdownFrequency => KnobMode::Frequency,
        ScenarioKind::BreakdownTime => KnobMode::ArrivalTime,
        other => {
            return Err(Error::Config(format!("{} is not a breakdown scenario", other.as_str())));
        }
    };
    if cfg.knob.mode != wanted {
        return Err(Error::Config(format!(
            "{} needs knob mode {:?}",
            cfg.scenario.as_str(),
            wanted
        )));
    }
    let knob_gamma = overlap(&cfg.source.spectral, &cfg.knob)?;
    if knob_gamma.norm() > cfg.thresholds.breakdown_max_overlap {
        return Err(Error::Config(format!(
            "overlap |γ| = {:.3e} is above the distinguishability threshold {}",
            knob_gamma.norm(),
            cfg.thresholds.breakdown_max_overlap
        )));
    }
    let gamma = cfg.effective_overlap()?;
    let runs = both_labelings(cfg, gamma, true)?;

    // Polarization reference with indistinguishable photons, same streams.
    let imp = cfg.source.imperfections()?;
    let (pol_station, _) = stations(cfg, &imp)?;
    let reference_state = source_state(c(imp.residual_overlap, 0.0), &imp)?;
    let reference = measure_labeling(cfg, &reference_state, &pol_station, false)?;

    let t = &cfg.thresholds;
    let c_path_limit = if cfg.exact {
        t.breakdown_max_path_concurrence_exact
    } else {
        t.breakdown_max_path_concurrence
    };
    let checks = vec![
        Check::at_most("path_concurrence", runs[1].metrics.concurrence, c_path_limit),
        Check::at_most("path_visibility_x", runs[1].metrics.visibility_x, t.breakdown_max_visibility),
        Check::at_most(
            "polarization_concurrence_shift",
            (runs[0].metrics.concurrence - reference.metrics.concurrence).abs(),
            t.breakdown_max_pol_concurrence_shift,
        ),
    ];
    Ok(RunBundle {
        config: cfg.clone(),
        overlap: Some(gamma),
        runs,
        sweep: Vec::new(),
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// MLE on pure exact data stops within ~1e-8 of the boundary, where C moves
/// like the square root of the smallest eigenvalues.
const EXACT_SWEEP_TOLERANCE: f64 = 1e-6;

pub fn run_gamma_sweep(cfg: &ScenarioConfig) -> Result<RunBundle> {
    let start = Instant::now();
    cfg.validate()?;
    let imp = cfg.source.imperfections()?;
    let rows: Vec<SweepRow> = cfg
        .gamma_grid
        .par_iter()
        .map(|&g| -> Result<SweepRow> {
            let eff = g * imp.residual_overlap;
            let runs = both_labelings(cfg, c(eff, 0.0), false)?;
            Ok(SweepRow {
                gamma: g,
                gamma_effective: eff,
                c_path: runs[1].metrics.concurrence,
                c_pol: runs[0].metrics.concurrence,
                visibility_x: runs[1].metrics.visibility_x,
            })
        })
        .collect::<Result<_>>()?;
    let mut checks = Vec::new();
    if cfg.exact {
        let mut order: Vec<&SweepRow> = rows.iter().collect();
        order.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        let worst_drop = order
            .windows(2)
            .map(|w| w[0].c_path - w[1].c_path)
            .fold(0.0, f64::max);
        checks.push(Check::at_most("path_concurrence_monotonic_drop", worst_drop, EXACT_SWEEP_TOLERANCE));
        let c_pol: Vec<f64> = rows.iter().map(|r| r.c_pol).collect();
        let spread = c_pol.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - c_pol.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push(Check::at_most("polarization_concurrence_spread", spread, EXACT_SWEEP_TOLERANCE));
    }
    Ok(RunBundle {
        config: cfg.clone(),
        overlap: None,
        runs: Vec::new(),
        sweep: rows,
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

/// Reconstructs external count files; no simulation.
pub fn run_ingest(cfg: &ScenarioConfig) -> Result<RunBundle> {
    let start = Instant::now();
    cfg.validate()?;
    let mut inputs = Vec::new();
    if let Some(p) = &cfg.ingest.counts_polarization {
        inputs.push((Labeling::ByPath, p.clone()));
    }
    if let Some(p) = &cfg.ingest.counts_path {
        inputs.push((Labeling::ByPolarization, p.clone()));
    }
    if inputs.is_empty() {
        return Err(Error::Config("ingest needs counts_polarization and/or counts_path".into()));
    }
    let mut runs = Vec::new();
    for (labeling, path) in inputs {
        let records = read_counts_csv(&path)?;
        let counts = TomographyCounts::from_records(&records, labeling)?;
        let (linear, mle) = reconstruct(cfg, &counts)?;
        let sampled = records.iter().all(|r| r.counts.is_some());
        let thetas = &cfg.scan.thetas_deg;
        let vis = |basis| -> Result<f64> {
            Ok(metrics::visibility(thetas, &predicted_scan(&mle.rho, basis, thetas))?.visibility)
        };
        let errors = if sampled { error_bars(cfg, &counts, labeling)? } else { None };
        let metrics = MetricsReport {
            fidelity: metrics::fidelity(&mle.rho, &bell_target())?,
            concurrence: metrics::concurrence(&mle.rho)?,
            visibility_z: vis(ScanBasis::Z)?,
            visibility_x: vis(ScanBasis::X)?,
            errors,
        };
        let seed = records.first().map(|r| r.seed).unwrap_or(cfg.seed);
        runs.push(LabelingRun {
            labeling,
            records,
            linear,
            mle,
            scans: None,
            metrics,
            seed,
        });
    }
    Ok(RunBundle {
        config: cfg.clone(),
        overlap: None,
        runs,
        sweep: Vec::new(),
        checks: Vec::new(),
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunBundle> {
    match cfg.scenario {
        ScenarioKind::Duality => run_duality(cfg),
        ScenarioKind::BreakdownFrequency | ScenarioKind::BreakdownTime => run_breakdown(cfg),
        ScenarioKind::GammaSweep => run_gamma_sweep(cfg),
        ScenarioKind::Ingest => run_ingest(cfg),
    }
}

pub fn density_matrix_json(run: &LabelingRun) -> Value {
    let rho = &run.mle.rho;
    let entries: Vec<Vec<Value>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let z = rho.entries()[(i, j)];
                    json!({"re": z.re, "im": z.im})
                })
                .collect()
        })
        .collect();
    json!({
        "labeling": run.labeling.as_str(),
        "basis_labels": rho.basis_labels(),
        "entries": entries,
        "psd": rho.is_psd(0.0),
        "min_eigenvalue": rho.min_eigenvalue(),
        "log_likelihood": run.mle.log_likelihood,
        "linear_inversion_psd": run.linear.is_psd(0.0),
        "linear_inversion_min_eigenvalue": run.linear.min_eigenvalue(),
        "mle_iterations": run.mle.iterations,
        "fitted_scale": run.mle.scale,
        "seed": run.seed,
    })
}

pub fn metrics_json(bundle: &RunBundle) -> Value {
    let mut labelings = serde_json::Map::new();
    for r in &bundle.runs {
        labelings.insert(r.labeling.qubit_name().into(), serde_json::to_value(&r.metrics).unwrap());
    }
    let overlap = bundle
        .overlap
        .map(|g| json!({"re": g.re, "im": g.im, "abs": g.norm()}));
    json!({
        "scenario": bundle.config.scenario.as_str(),
        "seed": bundle.config.seed,
        "exact": bundle.config.exact,
        "pairs_per_setting": bundle.config.pairs_per_setting,
        "overlap": overlap,
        "metrics": labelings,
        "sweep": bundle.sweep,
        "checks": bundle.checks,
        "status": if bundle.passed() { "pass" } else { "fail" },
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow], seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gamma", "gamma_effective", "c_path", "c_pol", "visibility_x", "gamma_squared", "seed"])?;
    for r in rows {
        w.write_record([
            r.gamma.to_string(),
            r.gamma_effective.to_string(),
            r.c_path.to_string(),
            r.c_pol.to_string(),
            r.visibility_x.to_string(),
            (r.gamma_effective * r.gamma_effective).to_string(),
            seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot_files(dir: &Path, bundle: &RunBundle) -> Result<()> {
    use std::fmt::Write as _;
    for r in &bundle.runs {
        if let Some([z, x]) = &r.scans {
            let mut text = String::from("# theta_deg z_counts z_expected x_counts x_expected\n");
            for (a, b) in z.rows.iter().zip(&x.rows) {
                let _ = writeln!(
                    text,
                    "{} {} {} {} {}",
                    a.theta_deg,
                    a.observed(),
                    a.expected_prob * a.pairs as f64,
                    b.observed(),
                    b.expected_prob * b.pairs as f64
                );
            }
            fs::write(dir.join(format!("plot_scan_{}.dat", r.labeling.qubit_name())), text)?;
        }
    }
    if !bundle.sweep.is_empty() {
        let mut text = String::from("# gamma c_path c_pol visibility_x gamma_effective_squared\n");
        for s in &bundle.sweep {
            let _ = writeln!(
                text,
                "{} {} {} {} {}",
                s.gamma,
                s.c_path,
                s.c_pol,
                s.visibility_x,
                s.gamma_effective * s.gamma_effective
            );
        }
        fs::write(dir.join("plot_sweep.dat"), text)?;
    }
    Ok(())
}

/// Writes the bundle into `dir`. Everything except `run.log` is a pure
/// function of the configuration.
pub fn write_bundle(bundle: &RunBundle, dir: &Path, emit_plots: bool) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    write_json(&dir.join("config.json"), &bundle.config)?;
    for r in &bundle.runs {
        let key = r.labeling.qubit_name();
        write_counts_csv(&dir.join(format!("counts_{key}.csv")), &r.records)?;
        write_json(&dir.join(format!("rho_{key}.json")), &density_matrix_json(r))?;
        if let Some([z, x]) = &r.scans {
            write_scan_csv(&dir.join(format!("scan_{key}.csv")), &[z, x])?;
        }
    }
    if !bundle.sweep.is_empty() {
        write_sweep_csv(&dir.join("sweep.csv"), &bundle.sweep, bundle.config.seed)?;
    }
    write_json(&dir.join("metrics.json"), &metrics_json(bundle))?;
    if emit_plots {
        write_plot_files(dir, bundle)?;
    }
    let log = format!(
        "dualbench {}\nscenario {}\nseed {}\nexact {}\nelapsed_s {:.3}\nstatus {}\n",
        env!("CARGO_PKG_VERSION"),
        bundle.config.scenario.as_str(),
        bundle.config.seed,
        bundle.config.exact,
        bundle.elapsed_s,
        if bundle.passed() { "pass" } else { "fail" }
    );
    fs::write(dir.join("run.log"), log)?;
    Ok(())
}
