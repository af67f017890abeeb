//! Photon-pair source: the polarization-entangled pair with a tunable
//! internal (spectral/temporal) label on each path.
//!
//! The internal label rides on the path: the signal photon carries the
//! wavepacket `φ_S = e₀` and the idler `φ_I = γ e₀ + √(1-|γ|²) e₁`, where `γ`
//! is the wavepacket overlap. Two internal basis states represent any pair of
//! wavepackets exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, C64};
use crate::state::{reduce_to_qubits, Ensemble, Labeling, Mode, Pol, Port, TwoPhotonState};

/// Speed of light in nm/ps.
const SPEED_OF_LIGHT: f64 = 299_792.458;
/// FWHM = this factor times the standard deviation of a Gaussian.
const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_4;
/// Time-bandwidth product of a transform-limited Gaussian (FWHM intensities).
const GAUSSIAN_TBP: f64 = 0.441_271_200_305_303_1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureTuning {
    /// Crystal temperature of frequency-degenerate emission.
    pub degenerate_temperature_c: f64,
    /// Signal-minus-idler wavelength splitting per degree.
    pub slope_nm_per_c: f64,
    pub min_temperature_c: f64,
    pub max_temperature_c: f64,
}

impl Default for TemperatureTuning {
    fn default() -> Self {
        TemperatureTuning {
            degenerate_temperature_c: 53.7,
            slope_nm_per_c: -1.3,
            min_temperature_c: 30.0,
            max_temperature_c: 80.0,
        }
    }
}

pub fn temperature_to_detuning(temperature_c: f64, tuning: &TemperatureTuning) -> Result<f64> {
    if !(tuning.min_temperature_c..=tuning.max_temperature_c).contains(&temperature_c) {
        return Err(Error::Config(format!(
            "crystal temperature {temperature_c} °C outside the tuning range [{}, {}]",
            tuning.min_temperature_c, tuning.max_temperature_c
        )));
    }
    Ok(tuning.slope_nm_per_c * (temperature_c - tuning.degenerate_temperature_c))
}

/// Gaussian spectral/temporal model of the down-converted photons.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralModel {
    pub center_wavelength_nm: f64,
    /// FWHM of the wavelength (intensity) spectrum.
    pub fwhm_nm: f64,
    /// FWHM of the temporal intensity profile.
    pub coherence_time_ps: f64,
    pub temperature_tuning: TemperatureTuning,
}

impl Default for SpectralModel {
    fn default() -> Self {
        SpectralModel {
            center_wavelength_nm: 808.0,
            fwhm_nm: 0.78,
            coherence_time_ps: 2.8,
            temperature_tuning: TemperatureTuning::default(),
        }
    }
}

impl SpectralModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_wavelength_nm > 0.0) {
            return Err(Error::Config("center wavelength must be positive".into()));
        }
        if !(self.fwhm_nm > 0.0) {
            return Err(Error::Config("spectral FWHM must be positive".into()));
        }
        if !(self.coherence_time_ps > 0.0) {
            return Err(Error::Config("coherence time must be positive".into()));
        }
        let limited = self.transform_limited_coherence_ps();
        if (self.coherence_time_ps / limited - 1.0).abs() > 0.2 {
            log::warn!(
                "coherence time {:.3} ps and spectral FWHM {:.3} nm are not a Gaussian transform pair \
                 (transform limit {:.3} ps); frequency and time overlaps use their own widths",
                self.coherence_time_ps,
                self.fwhm_nm,
                limited
            );
        }
        Ok(())
    }

    /// Temporal FWHM of a transform-limited pulse with this spectrum.
    pub fn transform_limited_coherence_ps(&self) -> f64 {
        let bandwidth = SPEED_OF_LIGHT * self.fwhm_nm / self.center_wavelength_nm.powi(2);
        GAUSSIAN_TBP / bandwidth
    }

    pub fn sigma_wavelength_nm(&self) -> f64 {
        self.fwhm_nm / FWHM_PER_SIGMA
    }

    pub fn sigma_time_ps(&self) -> f64 {
        self.coherence_time_ps / FWHM_PER_SIGMA
    }

    /// Closed-form overlap of two unit-norm Gaussian wavepackets whose centers
    /// differ by `detuning_nm` and whose arrival times differ by `delay_ps`.
    ///
    /// Magnitude `exp(-Δλ²/8σ_λ²) · exp(-τ²/8σ_t²)`; phase `Δω τ / 2` with
    /// `Δω = -2πc Δλ / λ₀²`. The carrier phase `ω₀ τ` is dropped: it is a path
    /// length phase, and reduced path states depend only on `|γ|`.
    pub fn gaussian_overlap(&self, detuning_nm: f64, delay_ps: f64) -> C64 {
        let sl = self.sigma_wavelength_nm();
        let st = self.sigma_time_ps();
        let magnitude = (-detuning_nm.powi(2) / (8.0 * sl * sl)).exp()
            * (-delay_ps.powi(2) / (8.0 * st * st)).exp();
        let d_omega = -2.0 * std::f64::consts::PI * SPEED_OF_LIGHT * detuning_nm
            / self.center_wavelength_nm.powi(2);
        C64::from_polar(magnitude, 0.5 * d_omega * delay_ps)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnobMode {
    #[default]
    None,
    Frequency,
    ArrivalTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistinguishabilityKnob {
    pub mode: KnobMode,
    /// Signal minus idler center wavelength.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_lambda_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crystal_temperature_c: Option<f64>,
    pub delay_ps: f64,
}

impl DistinguishabilityKnob {
    pub fn frequency(delta_lambda_nm: f64) -> Self {
        DistinguishabilityKnob {
            mode: KnobMode::Frequency,
            delta_lambda_nm: Some(delta_lambda_nm),
            ..Default::default()
        }
    }

    pub fn temperature(crystal_temperature_c: f64) -> Self {
        DistinguishabilityKnob {
            mode: KnobMode::Frequency,
            crystal_temperature_c: Some(crystal_temperature_c),
            ..Default::default()
        }
    }

    pub fn delay(delay_ps: f64) -> Self {
        DistinguishabilityKnob {
            mode: KnobMode::ArrivalTime,
            delay_ps,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delay_ps >= 0.0) {
            return Err(Error::Config(format!("delay {} ps must be non-negative", self.delay_ps)));
        }
        if self.mode == KnobMode::Frequency
            && self.delta_lambda_nm.is_some() == self.crystal_temperature_c.is_some()
        {
            return Err(Error::Config(
                "frequency mode needs exactly one of delta_lambda_nm or crystal_temperature_c".into(),
            ));
        }
        Ok(())
    }

    /// Signal-minus-idler detuning in nm (zero unless in frequency mode).
    pub fn detuning_nm(&self, tuning: &TemperatureTuning) -> Result<f64> {
        if self.mode != KnobMode::Frequency {
            return Ok(0.0);
        }
        match (self.delta_lambda_nm, self.crystal_temperature_c) {
            (Some(d), None) => Ok(d),
            (None, Some(t)) => temperature_to_detuning(t, tuning),
            _ => Err(Error::Config(
                "frequency mode needs exactly one of delta_lambda_nm or crystal_temperature_c".into(),
            )),
        }
    }

    pub fn effective_delay_ps(&self) -> f64 {
        if self.mode == KnobMode::None {
            0.0
        } else {
            self.delay_ps
        }
    }
}

/// Overlap `γ` of the signal and idler wavepackets.
pub fn overlap(model: &SpectralModel, knob: &DistinguishabilityKnob) -> Result<C64> {
    knob.validate()?;
    if knob.mode == KnobMode::None {
        return Ok(c(1.0, 0.0));
    }
    let detuning = knob.detuning_nm(&model.temperature_tuning)?;
    Ok(model.gaussian_overlap(detuning, knob.effective_delay_ps()))
}

/// Source imperfections applied to the ideal entangled pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// ε in [-1, 1]; term amplitudes become `(cos ε', sin ε')` with `ε' = π(1+ε)/4`.
    pub amplitude_imbalance: f64,
    /// q in [0, 1]; the relative sign flips with probability q/2.
    pub dephasing: f64,
    /// w in [0, 1]; weight of the uniform mixture of the four product terms.
    pub white_noise: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64| {
            if !(lo..=1.0).contains(&v) {
                Err(Error::Config(format!("{name} = {v} outside [{lo}, 1]")))
            } else {
                Ok(())
            }
        };
        check("amplitude_imbalance", self.amplitude_imbalance, -1.0)?;
        check("dephasing", self.dephasing, 0.0)?;
        check("white_noise", self.white_noise, 0.0)
    }

    pub fn is_ideal(&self) -> bool {
        *self == NoiseModel::default()
    }
}

/// Named imperfection profile: source noise plus apparatus terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Imperfections {
    pub noise: NoiseModel,
    /// Multiplies the knob overlap; residual mode mismatch of the source.
    pub residual_overlap: f64,
    /// Error on the path-bench compensator phase, degrees.
    pub compensator_offset_deg: f64,
}

impl Default for Imperfections {
    fn default() -> Self {
        Imperfections {
            noise: NoiseModel::default(),
            residual_overlap: 1.0,
            compensator_offset_deg: 0.0,
        }
    }
}

pub const PROFILE_NAMES: [&str; 2] = ["ideal", "paper2014"];

impl Imperfections {
    /// `paper2014` is fitted to target polarization and path
    /// concurrences (0.901, 0.896) and path fidelity (0.938). Balanced
    /// amplitudes, 4% white noise and the dephasing that then gives C = 0.901;
    /// the residual overlap scales the path coherence down to C = 0.896 and
    /// the compensator error rotates it until F = 0.938. The polarization
    /// fidelity lands at (1 + C)/2 ≈ 0.9505, the largest value any two-qubit
    /// state with that concurrence can reach.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "ideal" => Ok(Imperfections::default()),
            "paper2014" => Ok(Imperfections {
                noise: NoiseModel {
                    amplitude_imbalance: 0.0,
                    dephasing: 0.040_625,
                    white_noise: 0.04,
                },
                residual_overlap: 0.976_419,
                compensator_offset_deg: 12.135,
            }),
            other => Err(Error::Config(format!(
                "unknown noise profile '{other}' (known: {})",
                PROFILE_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if !(0.0..=1.0).contains(&self.residual_overlap) {
            return Err(Error::Config(format!(
                "residual_overlap {} outside [0, 1]",
                self.residual_overlap
            )));
        }
        Ok(())
    }
}

fn internal_vectors(gamma: C64) -> ([C64; 2], [C64; 2]) {
    let rest = (1.0 - gamma.norm_sqr()).max(0.0).sqrt();
    ([c(1.0, 0.0), c(0.0, 0.0)], [gamma, c(rest, 0.0)])
}

fn pair_terms(
    signal_pol: Pol,
    idler_pol: Pol,
    amplitude: C64,
    phi_s: &[C64; 2],
    phi_i: &[C64; 2],
    out: &mut Vec<((Mode, Mode), C64)>,
) {
    for (is, a) in phi_s.iter().enumerate() {
        for (ii, b) in phi_i.iter().enumerate() {
            let v = amplitude * a * b;
            if v.norm() > 0.0 {
                out.push((
                    (
                        Mode::new(Port::signal(), signal_pol, is),
                        Mode::new(Port::idler(), idler_pol, ii),
                    ),
                    v,
                ));
            }
        }
    }
}

/// Pair state for a given wavepacket overlap `gamma`.
pub fn make_pair_with_overlap(gamma: C64, noise: &NoiseModel) -> Result<Ensemble> {
    noise.validate()?;
    if gamma.norm() > 1.0 + 1e-12 {
        return Err(Error::Config(format!("overlap |γ| = {} exceeds 1", gamma.norm())));
    }
    let (phi_s, phi_i) = internal_vectors(gamma);
    let tilt = std::f64::consts::FRAC_PI_4 * (1.0 + noise.amplitude_imbalance);
    let (sin_t, cos_t) = tilt.sin_cos();
    let w = noise.white_noise;
    let q = noise.dephasing;

    let mut members = Vec::new();
    for (sign, weight) in [(1.0, (1.0 - w) * (1.0 - q / 2.0)), (-1.0, (1.0 - w) * q / 2.0)] {
        if weight <= 0.0 {
            continue;
        }
        let mut terms = Vec::new();
        pair_terms(Pol::H, Pol::V, c(cos_t, 0.0), &phi_s, &phi_i, &mut terms);
        pair_terms(Pol::V, Pol::H, c(sign * sin_t, 0.0), &phi_s, &phi_i, &mut terms);
        members.push(TwoPhotonState::normalized(terms, weight)?);
    }
    if w > 0.0 {
        for (ps, pi) in [(Pol::H, Pol::H), (Pol::H, Pol::V), (Pol::V, Pol::H), (Pol::V, Pol::V)] {
            let mut terms = Vec::new();
            pair_terms(ps, pi, c(1.0, 0.0), &phi_s, &phi_i, &mut terms);
            members.push(TwoPhotonState::normalized(terms, w / 4.0)?);
        }
    }
    let ensemble = Ensemble::new(members)?;
    let rho = reduce_to_qubits(&ensemble, Labeling::ByPath)?;
    let min = rho.min_eigenvalue();
    if min < -1e-9 {
        return Err(Error::Validation(format!(
            "noise model produced a non-positive polarization state (min eigenvalue {min:.3e})"
        )));
    }
    Ok(ensemble)
}

/// Pair state for a spectral model and distinguishability setting.
pub fn make_pair(
    model: &SpectralModel,
    knob: &DistinguishabilityKnob,
    noise: &NoiseModel,
) -> Result<Ensemble> {
    model.validate()?;
    make_pair_with_overlap(overlap(model, knob)?, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat4;

    /// Simpson quadrature of ∫ φ_a*(x) φ_b(x) e^{i k x} dx for unit-norm
    /// Gaussian amplitudes with intensity std `sigma`.
    fn quadrature_overlap(sigma: f64, shift: f64, k: f64) -> C64 {
        let amp = |x: f64, center: f64| {
            (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25)
                * (-(x - center).powi(2) / (4.0 * sigma * sigma)).exp()
        };
        let (lo, hi) = (-12.0 * sigma - shift.abs(), 12.0 * sigma + shift.abs());
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut total = c(0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let wgt = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            total += C64::from_polar(wgt * amp(x, 0.0) * amp(x, shift), k * x);
        }
        total * (h / 3.0)
    }

    #[test]
    fn identical_wavepackets_overlap_fully() {
        let m = SpectralModel::default();
        let g = overlap(&m, &DistinguishabilityKnob::default()).unwrap();
        assert_eq!(g, c(1.0, 0.0));
        let g = overlap(&m, &DistinguishabilityKnob::frequency(0.0)).unwrap();
        assert!((g - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn one_fwhm_detuning_matches_quadrature() {
        let m = SpectralModel::default();
        let oracle = quadrature_overlap(m.sigma_wavelength_nm(), m.fwhm_nm, 0.0);
        // Frozen from the quadrature above: |γ| = 0.5 at one FWHM.
        assert!((oracle.norm() - 0.5).abs() < 1e-9);
        let g = overlap(&m, &DistinguishabilityKnob::frequency(0.78)).unwrap();
        assert!((g.norm() - oracle.norm()).abs() < 1e-9);
    }

    #[test]
    fn delay_overlap_matches_quadrature() {
        let m = SpectralModel::default();
        // Spectral amplitude whose temporal intensity has std sigma_t.
        let sigma_omega = 1.0 / (2.0 * m.sigma_time_ps());
        for tau in [0.5, 1.0, 2.8, 4.0] {
            let oracle = quadrature_overlap(sigma_omega, 0.0, tau);
            let g = m.gaussian_overlap(0.0, tau);
            assert!((g.norm() - oracle.norm()).abs() < 1e-9, "tau = {tau}");
        }
        let g = overlap(&m, &DistinguishabilityKnob::delay(20.0)).unwrap();
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn overlap_decreases_monotonically() {
        let m = SpectralModel::default();
        let mut last = 1.0 + 1e-12;
        for k in 0..40 {
            let g = m.gaussian_overlap(0.05 * k as f64, 0.0).norm();
            assert!(g < last);
            last = g;
        }
        let mut last = 1.0 + 1e-12;
        for k in 0..40 {
            let g = m.gaussian_overlap(0.0, 0.25 * k as f64).norm();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn temperature_anchor_and_symmetry() {
        let t = TemperatureTuning::default();
        assert_eq!(temperature_to_detuning(53.7, &t).unwrap(), 0.0);
        let d = temperature_to_detuning(50.0, &t).unwrap();
        assert!((d - (-1.3 * (50.0 - 53.7))).abs() < 1e-12);
        assert!(d.abs() >= 3.0 * 0.78);
        let up = temperature_to_detuning(55.0, &t).unwrap();
        let down = temperature_to_detuning(52.4, &t).unwrap();
        assert!((up + down).abs() < 1e-9);
        let m = SpectralModel::default();
        assert!((m.gaussian_overlap(up, 0.0).norm() - m.gaussian_overlap(down, 0.0).norm()).abs() < 1e-12);
        assert!(temperature_to_detuning(120.0, &t).is_err());
    }

    #[test]
    fn fifty_degrees_is_fully_distinguishable() {
        let m = SpectralModel::default();
        let g = overlap(&m, &DistinguishabilityKnob::temperature(50.0)).unwrap();
        assert!(g.norm() < 1e-10);
    }

    #[test]
    fn knob_validation() {
        let mut k = DistinguishabilityKnob::frequency(0.1);
        k.crystal_temperature_c = Some(50.0);
        assert!(k.validate().is_err());
        assert!(DistinguishabilityKnob::delay(-1.0).validate().is_err());
    }

    #[test]
    fn ideal_pair_reduces_to_eq1() {
        let st = make_pair(
            &SpectralModel::default(),
            &DistinguishabilityKnob::default(),
            &NoiseModel::default(),
        )
        .unwrap();
        let rho = reduce_to_qubits(&st, Labeling::ByPath).unwrap();
        let e = rho.entries();
        for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert!((e[(i, j)] - c(0.5, 0.0)).norm() < 1e-15);
        }
        assert!((e[(0, 0)].norm() + e[(3, 3)].norm()) < 1e-15);
    }

    #[test]
    fn path_coherence_is_gamma_squared_over_two() {
        for gamma in [0.0, 0.3, 0.7, 1.0] {
            let st = make_pair_with_overlap(c(gamma, 0.0), &NoiseModel::default()).unwrap();
            let rho = reduce_to_qubits(&st, Labeling::ByPolarization).unwrap();
            assert!((rho.entries()[(1, 2)].re - gamma * gamma / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn polarization_state_ignores_the_knob() {
        let noise = NoiseModel {
            amplitude_imbalance: 0.1,
            dephasing: 0.05,
            white_noise: 0.03,
        };
        let reference = reduce_to_qubits(&make_pair_with_overlap(c(1.0, 0.0), &noise).unwrap(), Labeling::ByPath)
            .unwrap();
        for gamma in [0.0, 0.4, 0.9] {
            let rho = reduce_to_qubits(&make_pair_with_overlap(c(gamma, 0.0), &noise).unwrap(), Labeling::ByPath)
                .unwrap();
            let d: Mat4 = rho.entries() - reference.entries();
            assert!(crate::linalg::max_abs(&d) < 1e-14);
        }
    }

    #[test]
    fn white_noise_gives_werner_form() {
        let w = 0.2;
        let st = make_pair_with_overlap(
            c(1.0, 0.0),
            &NoiseModel {
                white_noise: w,
                ..Default::default()
            },
        )
        .unwrap();
        let rho = reduce_to_qubits(&st, Labeling::ByPath).unwrap();
        let psi = Mat4::from_fn(|i, j| {
            if (i == 1 || i == 2) && (j == 1 || j == 2) {
                c(0.5, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let werner = psi.scale(1.0 - w) + Mat4::identity().scale(w / 4.0);
        assert!(crate::linalg::max_abs(&(rho.entries() - werner)) < 1e-14);
        for m in st.members() {
            assert!((m.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_parameters_are_range_checked() {
        let bad = NoiseModel {
            white_noise: 1.5,
            ..Default::default()
        };
        assert!(make_pair_with_overlap(c(1.0, 0.0), &bad).is_err());
        assert!(Imperfections::profile("paper2014").unwrap().validate().is_ok());
        assert!(Imperfections::profile("lab").is_err());
    }
}
