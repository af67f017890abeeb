//! Small fixed-size complex linear algebra used across the crate.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;
pub type Ket2 = Vector2<C64>;
pub type Ket4 = Vector4<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pauli matrices indexed 0..4 as (I, X, Y, Z).
pub fn pauli(index: usize) -> Mat2 {
    match index {
        0 => Mat2::identity(),
        1 => Mat2::new(ZERO, ONE, ONE, ZERO),
        2 => Mat2::new(ZERO, -I, I, ZERO),
        3 => Mat2::new(ONE, ZERO, ZERO, -ONE),
        _ => panic!("pauli index out of range: {index}"),
    }
}

pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = Mat4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

pub fn kron_ket(a: &Ket2, b: &Ket2) -> Ket4 {
    Ket4::new(a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1])
}

pub fn projector(ket: &Ket4) -> Mat4 {
    ket * ket.adjoint()
}

pub fn max_abs(m: &Mat4) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermiticity_defect(m: &Mat4) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending.
pub fn hermitian_eigen(m: &Mat4) -> (Vector4<f64>, Mat4) {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vector4::zeros();
    let mut vectors = Mat4::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn from_eigen(values: &Vector4<f64>, vectors: &Mat4) -> Mat4 {
    let d = Mat4::from_diagonal(&values.map(|v| c(v, 0.0)));
    vectors * d * vectors.adjoint()
}

/// Clips negative eigenvalues to zero and renormalizes the trace to one.
pub fn project_psd(m: &Mat4) -> Mat4 {
    let (values, vectors) = hermitian_eigen(m);
    let clipped = values.map(|v| v.max(0.0));
    let total: f64 = clipped.sum();
    if total <= 0.0 {
        return Mat4::identity().scale(0.25);
    }
    from_eigen(&(clipped / total), &vectors)
}

/// Principal square root of a positive semidefinite Hermitian matrix.
pub fn sqrt_psd(m: &Mat4) -> Mat4 {
    let (values, vectors) = hermitian_eigen(m);
    from_eigen(&values.map(|v| v.max(0.0).sqrt()), &vectors)
}

pub fn trace_distance(a: &Mat4, b: &Mat4) -> f64 {
    let (values, _) = hermitian_eigen(&(a - b));
    0.5 * values.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn real_trace(m: &Mat4) -> f64 {
    m.trace().re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pauli_algebra() {
        let x = pauli(1);
        let y = pauli(2);
        let z = pauli(3);
        assert!((x * y - z.scale(1.0) * I).norm() < 1e-15);
        for k in 0..4 {
            assert!((pauli(k) * pauli(k) - Mat2::identity()).norm() < 1e-15);
        }
    }

    #[test]
    fn psd_projection_clips_negative_part() {
        let m = Mat4::from_diagonal(&Vector4::new(c(0.6, 0.0), c(0.5, 0.0), c(-0.1, 0.0), ZERO));
        let p = project_psd(&m);
        assert!((p[(0, 0)].re - 0.6 / 1.1).abs() < 1e-12);
        assert!(p[(2, 2)].norm() < 1e-12);
        assert!((real_trace(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = Mat4::from_fn(|i, j| c((i as f64 + 1.0).sin() * (j as f64 + 0.5), 0.3 * (i * j) as f64 - 0.2));
        let m = a * a.adjoint();
        let s = sqrt_psd(&m);
        assert!(max_abs(&(s * s - m)) < 1e-10);
    }
}
