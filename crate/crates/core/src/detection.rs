//! Coincidence probabilities, Poisson count sampling and correlation scans.
//!
//! A measurement setting names one single-qubit projector per analyzer arm.
//! Projectors given as qubit kets are turned into wave-plate angles against a
//! nominal bench: the arm's frame (how the qubit basis arrives at the analyzer
//! plates) and pass polarization (what the detector side transmits) are read
//! off by propagating single photons, then the QWP/HWP pair is solved so the
//! requested ket is sent onto the pass polarization.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, Ket2, Mat2, C64};
use crate::optics::{compile_with_internal, hwp_matrix, qwp_matrix, Bench};
use crate::state::{apply_unitary, Ensemble, Labeling, Pol, Port};

/// How one analyzer arm is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmSetting {
    /// Raw plate angles in degrees; `polarizer_deg` overrides the detector
    /// polarizer when given.
    Waveplates {
        qwp_deg: f64,
        hwp_deg: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        polarizer_deg: Option<f64>,
    },
    /// Projector `|ψ⟩⟨ψ|` on the arm's qubit, `ψ = (ψ₀, ψ₁)`.
    Projector([C64; 2]),
}

impl ArmSetting {
    pub fn projector(ket: Ket2) -> Result<Self> {
        let n = ket.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Validation("projector ket has zero norm".into()));
        }
        let k = ket.unscale(n);
        Ok(ArmSetting::Projector([k[0], k[1]]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorSetting {
    pub label: String,
    /// `arms[k]` drives `bench.analyzers[k]`.
    pub arms: [ArmSetting; 2],
}

impl ProjectorSetting {
    pub fn from_kets(label: impl Into<String>, a: Ket2, b: Ket2) -> Result<Self> {
        Ok(ProjectorSetting {
            label: label.into(),
            arms: [ArmSetting::projector(a)?, ArmSetting::projector(b)?],
        })
    }
}

/// Plate angles realizing one arm, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmAngles {
    pub qwp_deg: f64,
    pub hwp_deg: f64,
    pub polarizer_deg: Option<f64>,
}

#[derive(Clone, Debug)]
struct ArmFrame {
    detector: String,
    qwp: String,
    hwp: String,
    /// Columns: Jones vectors at the analyzer for qubit basis states 0 and 1.
    frame: Mat2,
    /// Linear polarization (radians) after the HWP that reaches the detector.
    pass_angle: f64,
}

/// Converts qubit projectors into analyzer angles for a nominal bench.
#[derive(Clone, Debug)]
pub struct Analyzer {
    labeling: Labeling,
    arms: [ArmFrame; 2],
}

const FRAME_TOLERANCE: f64 = 1e-9;

impl Analyzer {
    pub fn new(bench: &Bench) -> Result<Self> {
        bench.validate()?;
        let labeling = bench
            .labeling
            .ok_or_else(|| Error::Config("bench declares no labeling for its analyzers".into()))?;
        if bench.analyzers.len() != 2 {
            return Err(Error::Config(format!(
                "bench needs two analyzer slots, found {}",
                bench.analyzers.len()
            )));
        }
        let p0 = &bench.detector(&bench.analyzers[0].detector)?.port;
        let p1 = &bench.detector(&bench.analyzers[1].detector)?.port;
        if p0 == p1 {
            return Err(Error::Config("both analyzers feed the same detector port".into()));
        }
        let arm = |k: usize| arm_frame(bench, labeling, k);
        Ok(Analyzer {
            labeling,
            arms: [arm(0)?, arm(1)?],
        })
    }

    pub fn labeling(&self) -> Labeling {
        self.labeling
    }

    /// Plate angles sending `ket` (qubit frame) onto the arm's pass polarization.
    pub fn solve_arm(&self, arm: usize, ket: &Ket2) -> Result<ArmAngles> {
        let f = &self.arms[arm];
        let n = ket.norm();
        if !(n > 0.0) {
            return Err(Error::Validation("projector ket has zero norm".into()));
        }
        let chi = f.frame * ket.unscale(n);
        let (q, h) = solve_plates(&chi, f.pass_angle)?;
        Ok(ArmAngles {
            qwp_deg: q.to_degrees(),
            hwp_deg: h.to_degrees(),
            polarizer_deg: None,
        })
    }

    pub fn angles(&self, setting: &ProjectorSetting) -> Result<[ArmAngles; 2]> {
        let one = |k: usize| match &setting.arms[k] {
            ArmSetting::Waveplates {
                qwp_deg,
                hwp_deg,
                polarizer_deg,
            } => Ok(ArmAngles {
                qwp_deg: *qwp_deg,
                hwp_deg: *hwp_deg,
                polarizer_deg: *polarizer_deg,
            }),
            ArmSetting::Projector(k2) => self.solve_arm(k, &Ket2::new(k2[0], k2[1])),
        };
        Ok([one(0)?, one(1)?])
    }

    /// Copy of `bench` with the analyzer plates set for `setting`.
    pub fn configure(&self, bench: &Bench, setting: &ProjectorSetting) -> Result<Bench> {
        let angles = self.angles(setting)?;
        let mut out = bench.clone();
        for (f, a) in self.arms.iter().zip(angles) {
            out.set_angle(&f.qwp, a.qwp_deg.to_radians())?;
            out.set_angle(&f.hwp, a.hwp_deg.to_radians())?;
            if let Some(p) = a.polarizer_deg {
                out.detectors
                    .get_mut(&f.detector)
                    .ok_or_else(|| Error::Config(format!("detector {} is not declared", f.detector)))?
                    .polarizer = Some(p.to_radians());
            }
        }
        Ok(out)
    }

    fn detector_ports(&self, bench: &Bench) -> Result<(Port, Port)> {
        Ok((
            bench.detector(&self.arms[0].detector)?.port.clone(),
            bench.detector(&self.arms[1].detector)?.port.clone(),
        ))
    }
}

fn arm_frame(bench: &Bench, labeling: Labeling, k: usize) -> Result<ArmFrame> {
    let slot = &bench.analyzers[k];
    let qi = bench.element_index(&slot.qwp)?;
    let hi = bench.element_index(&slot.hwp)?;
    let port = bench.elements[qi].ports[0].clone();
    if hi <= qi || bench.elements[hi].ports[0] != port {
        return Err(Error::Config(format!(
            "analyzer {k}: {} must follow {} on the same port",
            slot.hwp, slot.qwp
        )));
    }
    if bench.elements[qi + 1..hi].iter().any(|e| e.ports.contains(&port)) {
        return Err(Error::Config(format!(
            "analyzer {k}: elements between {} and {} touch port {port}",
            slot.qwp, slot.hwp
        )));
    }
    let space = bench.port_space();
    let h_slot = space.slot(&port, Pol::H)?;
    let v_slot = space.slot(&port, Pol::V)?;
    let mut frame = Mat2::zeros();
    for b in 0..2 {
        let m = labeling.source_mode(k, b, 0);
        let out = bench.propagate_single(0..qi, &m.port, m.pol, false)?;
        frame[(0, b)] = out[h_slot];
        frame[(1, b)] = out[v_slot];
    }
    let defect = (frame.adjoint() * frame - Mat2::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if defect > FRAME_TOLERANCE {
        return Err(Error::Config(format!(
            "analyzer {k} ({}/{}) does not receive qubit {k} losslessly (frame defect {defect:.2e})",
            slot.qwp, slot.hwp
        )));
    }

    // Detector-side transfer from the HWP output to the detector port.
    let det = bench.detector(&slot.detector)?;
    let d_h = space.slot(&det.port, Pol::H)?;
    let d_v = space.slot(&det.port, Pol::V)?;
    let mut transfer = Mat2::zeros();
    for (col, pol) in [Pol::H, Pol::V].into_iter().enumerate() {
        let out = bench.propagate_single(hi + 1..bench.elements.len(), &port, pol, true)?;
        transfer[(0, col)] = out[d_h];
        transfer[(1, col)] = out[d_v];
    }
    let gram = transfer.adjoint() * transfer;
    let eig = gram.symmetric_eigen();
    let (hi_k, lo_k) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    if (eig.eigenvalues[hi_k] - 1.0).abs() > FRAME_TOLERANCE || eig.eigenvalues[lo_k].abs() > FRAME_TOLERANCE {
        return Err(Error::Config(format!(
            "analyzer {k}: detector {} does not project onto a single polarization \
             (transmissions {:.3e}, {:.3e})",
            slot.detector, eig.eigenvalues[hi_k], eig.eigenvalues[lo_k]
        )));
    }
    let pass = eig.eigenvectors.column(hi_k).into_owned();
    let pass_angle = linear_angle(&Ket2::new(pass[0], pass[1])).ok_or_else(|| {
        Error::Config(format!(
            "analyzer {k}: detector {} transmits an elliptical polarization",
            slot.detector
        ))
    })?;
    Ok(ArmFrame {
        detector: slot.detector.clone(),
        qwp: slot.qwp.clone(),
        hwp: slot.hwp.clone(),
        frame,
        pass_angle,
    })
}

/// Angle of a linearly polarized Jones vector (global phase removed), or
/// `None` if it is not linear.
fn linear_angle(v: &Ket2) -> Option<f64> {
    let big = if v[0].norm() >= v[1].norm() { v[0] } else { v[1] };
    let phase = big / big.norm();
    let (a, b) = (v[0] / phase, v[1] / phase);
    if a.im.abs() > 1e-8 || b.im.abs() > 1e-8 {
        return None;
    }
    Some(b.re.atan2(a.re))
}

fn linearity_defect(q: f64, chi: &Ket2) -> f64 {
    let u = qwp_matrix(q) * chi;
    (u[0].conj() * u[1]).im
}

/// QWP and HWP angles (radians) mapping `chi` onto linear polarization `pass`.
fn solve_plates(chi: &Ket2, pass: f64) -> Result<(f64, f64)> {
    const GRID: usize = 360;
    let step = std::f64::consts::PI / GRID as f64;
    let mut root = None;
    let mut best = (f64::INFINITY, 0.0);
    let mut prev = (0.0, linearity_defect(0.0, chi));
    for i in 0..=GRID {
        let q = i as f64 * step;
        let f = linearity_defect(q, chi);
        if f.abs() < best.0 {
            best = (f.abs(), q);
        }
        if f == 0.0 {
            root = Some(q);
            break;
        }
        if i > 0 && prev.1.signum() != f.signum() {
            let (mut lo, mut hi, mut flo) = (prev.0, q, prev.1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = linearity_defect(mid, chi);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            root = Some(0.5 * (lo + hi));
            break;
        }
        prev = (q, f);
    }
    let q = root.unwrap_or(best.1);
    let u = qwp_matrix(q) * chi;
    let alpha = linear_angle(&u)
        .ok_or_else(|| Error::Numerical("could not linearize the projector with a QWP".into()))?;
    let h = 0.5 * (alpha + pass);
    let out = hwp_matrix(h) * u;
    let overlap = (out[0] * pass.cos() + out[1] * pass.sin()).norm_sqr();
    if overlap < 1.0 - 1e-10 {
        return Err(Error::Numerical(format!(
            "wave-plate solution misses the pass polarization (overlap {overlap})"
        )));
    }
    Ok((q.rem_euclid(std::f64::consts::PI), h.rem_euclid(std::f64::consts::PI)))
}

/// Probability that a pair yields one click at each analyzer detector.
/// Amplitude routed to loss ports or both photons at one detector is not
/// counted; nothing is renormalized.
pub fn coincidence_on_configured(state: &Ensemble, bench: &Bench, ports: (&Port, &Port)) -> Result<f64> {
    let u = compile_with_internal(bench, state.internal_extent())?;
    let out = apply_unitary(state, &u)?;
    let mut p = 0.0;
    for member in out.members() {
        let mut mp = 0.0;
        for ((a, b), amp) in member.terms() {
            if (&a.port == ports.0 && &b.port == ports.1) || (&a.port == ports.1 && &b.port == ports.0) {
                mp += amp.norm_sqr();
            }
        }
        p += member.weight() * mp;
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Nominal analyzer calibration paired with the bench actually measuring.
#[derive(Clone, Debug)]
pub struct Station {
    analyzer: Analyzer,
    bench: Bench,
}

impl Station {
    /// Angles are solved on `nominal`, applied to `actual`.
    pub fn new(nominal: &Bench, actual: Bench) -> Result<Self> {
        let analyzer = Analyzer::new(nominal)?;
        actual.validate()?;
        Ok(Station {
            analyzer,
            bench: actual,
        })
    }

    pub fn ideal(bench: Bench) -> Result<Self> {
        Station::new(&bench.clone(), bench)
    }

    pub fn analyzer(&self) -> &Analyzer {
        &self.analyzer
    }

    pub fn bench(&self) -> &Bench {
        &self.bench
    }

    pub fn labeling(&self) -> Labeling {
        self.analyzer.labeling
    }

    pub fn probability(&self, state: &Ensemble, setting: &ProjectorSetting) -> Result<f64> {
        let configured = self.analyzer.configure(&self.bench, setting)?;
        let (a, b) = self.analyzer.detector_ports(&configured)?;
        coincidence_on_configured(state, &configured, (&a, &b))
    }
}

/// Coincidence probability with projectors solved on the same bench.
pub fn coincidence_probability(state: &Ensemble, bench: &Bench, setting: &ProjectorSetting) -> Result<f64> {
    Station::ideal(bench.clone())?.probability(state, setting)
}

/// Optional detector imperfections; defaults are ideal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    /// Per-detector efficiency; a coincidence scales with its square.
    pub efficiency: f64,
    /// Mean background coincidences added to every setting.
    pub background_counts: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            efficiency: 1.0,
            background_counts: 0.0,
        }
    }
}

impl DetectorModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) || self.efficiency == 0.0 {
            return Err(Error::Config(format!("detector efficiency {} outside (0, 1]", self.efficiency)));
        }
        if !(self.background_counts >= 0.0) {
            return Err(Error::Config("background counts must be non-negative".into()));
        }
        Ok(())
    }

    pub fn expected_counts(&self, prob: f64, pairs: u64) -> f64 {
        self.efficiency * self.efficiency * prob * pairs as f64 + self.background_counts
    }
}

/// Deterministic generator for one (seed, stream) pair. ChaCha20 with a
/// 256-bit key expanded from the seed and a 64-bit stream id.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One Poisson draw with mean `mean` from the given substream.
pub fn poisson_draw(mean: f64, seed: u64, stream: u64) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::Validation(format!("Poisson mean {mean} is not a finite non-negative number")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Numerical(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(&mut stream_rng(seed, stream)) as u64)
}

/// Poisson counts for a probability and number of emitted pairs.
pub fn sample_counts(prob: f64, pairs_emitted: u64, seed: u64, stream: u64) -> Result<u64> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::Validation(format!("probability {prob} outside [0, 1]")));
    }
    if pairs_emitted == 0 {
        return Err(Error::Validation("pairs_emitted must be positive".into()));
    }
    poisson_draw(prob * pairs_emitted as f64, seed, stream)
}

/// Exact expectations or seeded Poisson sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampling {
    Exact,
    /// Record `i` draws from stream `stream_base + i`.
    Poisson { seed: u64, stream_base: u64 },
}

impl Sampling {
    pub fn seed(&self) -> u64 {
        match self {
            Sampling::Exact => 0,
            Sampling::Poisson { seed, .. } => *seed,
        }
    }
}

/// Counts registered for one measurement setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    /// 1-based position in the measurement list.
    pub setting_index: usize,
    pub setting: ProjectorSetting,
    /// Expected coincidences (probability × pairs, after detector model).
    pub expected: f64,
    /// Sampled counts; `None` in exact mode, where `expected` stands in.
    pub counts: Option<u64>,
    pub pairs_emitted: u64,
    pub seed: u64,
}

impl CountRecord {
    pub fn observed(&self) -> f64 {
        self.counts.map(|n| n as f64).unwrap_or(self.expected)
    }

    pub fn probability(&self) -> f64 {
        self.expected / self.pairs_emitted as f64
    }
}

/// Measures every setting. Probabilities are computed in parallel; each
/// record samples from its own substream so the result is order-independent.
pub fn measure_settings(
    state: &Ensemble,
    station: &Station,
    settings: &[ProjectorSetting],
    pairs: u64,
    detector: &DetectorModel,
    sampling: Sampling,
) -> Result<Vec<CountRecord>> {
    use rayon::prelude::*;
    if pairs == 0 {
        return Err(Error::Validation("pairs per setting must be positive".into()));
    }
    detector.validate()?;
    let probs: Vec<f64> = settings
        .par_iter()
        .map(|s| station.probability(state, s))
        .collect::<Result<_>>()?;
    settings
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(i, (s, p))| {
            let expected = detector.expected_counts(p, pairs);
            let counts = match sampling {
                Sampling::Exact => None,
                Sampling::Poisson { seed, stream_base } => {
                    Some(poisson_draw(expected, seed, stream_base + i as u64)?)
                }
            };
            Ok(CountRecord {
                setting_index: i + 1,
                setting: s.clone(),
                expected,
                counts,
                pairs_emitted: pairs,
                seed: sampling.seed(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScanBasis {
    Z,
    X,
}

impl ScanBasis {
    /// Fixed ket on arm 1: `|0⟩` for Z, `(|0⟩ + |1⟩)/√2` for X.
    pub fn reference_ket(self) -> Ket2 {
        match self {
            ScanBasis::Z => Ket2::new(c(1.0, 0.0), c(0.0, 0.0)),
            ScanBasis::X => Ket2::new(c(1.0, 0.0), c(1.0, 0.0)).unscale(std::f64::consts::SQRT_2),
        }
    }
}

impl fmt::Display for ScanBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanBasis::Z => "Z",
            ScanBasis::X => "X",
        })
    }
}

/// Rotating-analyzer ket on arm 0: `cos2θ|0⟩ + sin2θ|1⟩`.
pub fn scan_ket(theta_deg: f64) -> Ket2 {
    let (s, co) = (2.0 * theta_deg.to_radians()).sin_cos();
    Ket2::new(c(co, 0.0), c(s, 0.0))
}

pub fn scan_setting(basis: ScanBasis, theta_deg: f64) -> Result<ProjectorSetting> {
    ProjectorSetting::from_kets(
        format!("{basis}:{theta_deg}"),
        scan_ket(theta_deg),
        basis.reference_ket(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theta_deg: f64,
    pub expected_prob: f64,
    pub counts: Option<u64>,
    pub pairs: u64,
    pub seed: u64,
}

impl ScanRow {
    pub fn observed(&self) -> f64 {
        self.counts.map(|n| n as f64).unwrap_or(self.expected_prob * self.pairs as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanTable {
    pub basis: ScanBasis,
    pub rows: Vec<ScanRow>,
}

impl ScanTable {
    pub fn thetas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.theta_deg).collect()
    }

    pub fn observed(&self) -> Vec<f64> {
        self.rows.iter().map(ScanRow::observed).collect()
    }

    pub fn expected_probs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.expected_prob).collect()
    }
}

pub fn correlation_scan(
    state: &Ensemble,
    station: &Station,
    basis: ScanBasis,
    thetas_deg: &[f64],
    pairs_per_point: u64,
    sampling: Sampling,
) -> Result<ScanTable> {
    if thetas_deg.is_empty() {
        return Err(Error::Validation("scan grid is empty".into()));
    }
    let settings = thetas_deg
        .iter()
        .map(|&t| scan_setting(basis, t))
        .collect::<Result<Vec<_>>>()?;
    let records = measure_settings(
        state,
        station,
        &settings,
        pairs_per_point,
        &DetectorModel::default(),
        sampling,
    )?;
    let rows = thetas_deg
        .iter()
        .zip(records)
        .map(|(&theta_deg, r)| ScanRow {
            theta_deg,
            expected_prob: r.probability(),
            counts: r.counts,
            pairs: r.pairs_emitted,
            seed: r.seed,
        })
        .collect();
    Ok(ScanTable { basis, rows })
}

/// Writes one or more scans as `basis,theta_deg,expected_prob,counts,pairs,seed`.
/// In exact mode the counts column carries the expectation value.
pub fn write_scan_csv(path: &Path, scans: &[&ScanTable]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["basis", "theta_deg", "expected_prob", "counts", "pairs", "seed"])?;
    for scan in scans {
        for r in &scan.rows {
            let counts = match r.counts {
                Some(n) => n.to_string(),
                None => r.observed().to_string(),
            };
            w.write_record([
                scan.basis.to_string(),
                r.theta_deg.to_string(),
                r.expected_prob.to_string(),
                counts,
                r.pairs.to_string(),
                r.seed.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
