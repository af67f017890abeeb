//! Figures of merit: fidelity, concurrence and fringe visibility.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, kron, pauli, Ket4, Mat4};
use crate::state::DensityMatrix;

const HERMITICITY_TOLERANCE: f64 = 1e-10;

/// `(|01⟩ + |10⟩)/√2`: the target for both labelings.
pub fn bell_target() -> Ket4 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ket4::new(c(0.0, 0.0), c(h, 0.0), c(h, 0.0), c(0.0, 0.0))
}

pub fn fidelity(rho: &DensityMatrix, target: &Ket4) -> Result<f64> {
    let m = rho.entries();
    let defect = linalg::hermiticity_defect(m);
    if defect > HERMITICITY_TOLERANCE {
        return Err(Error::Numerical(format!("density matrix is not Hermitian (defect {defect:.2e})")));
    }
    let n = target.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("target ket has norm {n}")));
    }
    let v = (target.adjoint() * m * target)[(0, 0)];
    if v.im.abs() > 1e-12 {
        return Err(Error::Numerical(format!("fidelity has imaginary part {:.2e}", v.im)));
    }
    Ok(v.re)
}

/// Spin-flipped matrix `(Y⊗Y) ρ* (Y⊗Y)`.
pub fn spin_flip(m: &Mat4) -> Mat4 {
    let yy = kron(&pauli(2), &pauli(2));
    yy * m.conjugate() * yy
}

/// Square roots of the eigenvalues of `ρ ρ̃`, non-increasing.
pub fn wootters_lambdas(rho: &DensityMatrix) -> Result<[f64; 4]> {
    let m = rho.entries();
    let defect = linalg::hermiticity_defect(m);
    if defect > HERMITICITY_TOLERANCE {
        return Err(Error::Numerical(format!("density matrix is not Hermitian (defect {defect:.2e})")));
    }
    let flipped = spin_flip(m);
    let mut values = if rho.min_eigenvalue() >= -1e-12 {
        let s = linalg::sqrt_psd(m);
        let (ev, _) = linalg::hermitian_eigen(&(s * flipped * s));
        let mut out = [0.0; 4];
        for (o, v) in out.iter_mut().zip(ev.iter()) {
            *o = v.max(0.0).sqrt();
        }
        out
    } else {
        let ev = (m * flipped)
            .schur()
            .eigenvalues()
            .ok_or_else(|| Error::Numerical("Schur decomposition of ρρ̃ failed".into()))?;
        let mut out = [0.0; 4];
        for (o, z) in out.iter_mut().zip(ev.iter()) {
            if z.re < -1e-9 {
                return Err(Error::Numerical(format!(
                    "ρρ̃ has a negative eigenvalue {:.3e}",
                    z.re
                )));
            }
            *o = z.re.max(0.0).sqrt();
        }
        out
    };
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    let l = wootters_lambdas(rho)?;
    Ok((l[0] - l[1] - l[2] - l[3]).clamp(0.0, 1.0))
}

/// Least-squares fit of `a + b cos4θ + c sin4θ` to a scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibilityFit {
    pub visibility: f64,
    pub offset: f64,
    pub amplitude: f64,
    /// Phase φ₀ of `a + |b| cos(4θ + φ₀)`, radians.
    pub phase: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
}

pub fn visibility(thetas_deg: &[f64], values: &[f64]) -> Result<VisibilityFit> {
    if thetas_deg.len() != values.len() {
        return Err(Error::Validation("scan angles and values differ in length".into()));
    }
    if thetas_deg.len() < 8 {
        return Err(Error::Validation(format!(
            "visibility fit needs at least 8 points, got {}",
            thetas_deg.len()
        )));
    }
    let lo = thetas_deg.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = thetas_deg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 90.0 - 1e-9 {
        return Err(Error::Validation(format!(
            "scan spans {:.1}°, less than one 90° fringe period",
            hi - lo
        )));
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (&t, &y) in thetas_deg.iter().zip(values) {
        let (s, co) = (4.0 * t.to_radians()).sin_cos();
        let row = Vector3::new(1.0, co, s);
        ata += row * row.transpose();
        aty += row * y;
    }
    let coef = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::Numerical("visibility fit is degenerate".into()))?;
    let (a, b, cc) = (coef[0], coef[1], coef[2]);
    if !(a > 0.0) {
        return Err(Error::Numerical(format!("fitted fringe offset {a:.3e} is not positive")));
    }
    let amplitude = b.hypot(cc);
    let ss: f64 = thetas_deg
        .iter()
        .zip(values)
        .map(|(&t, &y)| {
            let (s, co) = (4.0 * t.to_radians()).sin_cos();
            (y - a - b * co - cc * s).powi(2)
        })
        .sum();
    Ok(VisibilityFit {
        visibility: (amplitude / a).clamp(0.0, 1.0),
        offset: a,
        amplitude,
        phase: (-cc).atan2(b),
        residual: (ss / values.len() as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBars {
    pub fidelity: f64,
    pub concurrence: f64,
    pub visibility_z: f64,
    pub visibility_x: f64,
    /// Resamples whose reconstruction failed and were excluded.
    pub failed_resamples: usize,
    pub resamples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fidelity: f64,
    pub concurrence: f64,
    pub visibility_z: f64,
    pub visibility_x: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorBars>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fidelity", self.fidelity),
            ("concurrence", self.concurrence),
            ("visibility_z", self.visibility_z),
            ("visibility_x", self.visibility_x),
        ] {
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(Error::Validation(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if let Some(e) = &self.errors {
            if [e.fidelity, e.concurrence, e.visibility_z, e.visibility_x]
                .iter()
                .any(|v| !(*v >= 0.0))
            {
                return Err(Error::Validation("error bars must be non-negative".into()));
            }
        }
        Ok(())
    }
}
