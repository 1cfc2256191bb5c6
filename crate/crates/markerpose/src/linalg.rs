//! Small fixed-size linear algebra helpers.
//!
//! Everything here operates on plain arrays (`[f64; 3]`, `[[f64; 3]; 3]`, ...)
//! so the geometry code stays dependency-free. The eigesolver is a cyclic
//! Jacobi iteration for symmetric matrices, which is all the 3x3 and 4x4
//! problems in this crate need.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];
/// 3x4 projection matrix, row major.
pub type Mat34 = [[f64; 4]; 3];

pub const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

pub fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `m^T v` without forming the transpose.
pub fn mat3_tvec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inv3(m: &Mat3) -> Option<Mat3> {
    let d = det3(m);
    if d.abs() < 1e-300 {
        return None;
    }
    let inv_d = 1.0 / d;
    let mut out = [[0.0; 3]; 3];
    out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d;
    out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d;
    out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d;
    out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d;
    out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d;
    out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d;
    out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d;
    out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d;
    out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d;
    Some(out)
}

/// Solve the 2x2 system `[[a,b],[c,d]] x = [e,f]`.
pub fn solve2(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Option<(f64, f64)> {
    let det = a * d - b * c;
    if det.abs() < 1e-300 {
        return None;
    }
    Some(((e * d - b * f) / det, (a * f - e * c) / det))
}

/// Maximum absolute entry of `R^T R - I`; zero for an orthonormal matrix.
pub fn orthonormality_residual(r: &Mat3) -> f64 {
    let rtr = mat3_mul(&transpose(r), r);
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((rtr[i][j] - target).abs());
        }
    }
    worst
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues ascending and
/// eigenvectors as the columns of the returned matrix.
pub fn sym_eigen<const N: usize>(a: &[[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut m = *a;
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..N {
            for q in (p + 1)..N {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut vals = [0.0; N];
    for i in 0..N {
        vals[i] = m[i][i];
    }
    // Sort ascending, permuting eigenvector columns alongside.
    let mut order: [usize; N] = [0; N];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| vals[i].partial_cmp(&vals[j]).unwrap());
    let mut sorted_vals = [0.0; N];
    let mut sorted_vecs = [[0.0; N]; N];
    for (new, &old) in order.iter().enumerate() {
        sorted_vals[new] = vals[old];
        for r in 0..N {
            sorted_vecs[r][new] = v[r][old];
        }
    }
    (sorted_vals, sorted_vecs)
}

/// Nearest rotation matrix in Frobenius norm (polar decomposition).
///
/// Computes `m (m^T m)^{-1/2}` via the symmetric eigendecomposition of
/// `m^T m` and flips the weakest axis if the result would be a reflection.
pub fn polar_rotation(m: &Mat3) -> Mat3 {
    let mtm = mat3_mul(&transpose(m), m);
    let (vals, vecs) = sym_eigen(&mtm);
    // inv_sqrt = V diag(1/sqrt(vals)) V^T, with sign correction for det < 0.
    let flip = if det3(m) < 0.0 { -1.0 } else { 1.0 };
    let mut inv_sqrt = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = 0.0;
            for k in 0..3 {
                // vals ascending: index 0 is the weakest axis.
                let s = if k == 0 { flip } else { 1.0 };
                acc += vecs[i][k] * s / vals[k].max(1e-300).sqrt() * vecs[j][k];
            }
            inv_sqrt[i][j] = acc;
        }
    }
    mat3_mul(m, &inv_sqrt)
}

/// Null-space direction of a symmetric PSD system: eigenvector of the
/// smallest eigenvalue of `a^T a`, plus the ratio `lambda_min / lambda_max`
/// as a degeneracy diagnostic.
pub fn min_eigvec_normal<const N: usize>(rows: &[[f64; N]]) -> ([f64; N], f64) {
    let mut ata = [[0.0; N]; N];
    for row in rows {
        for i in 0..N {
            for j in 0..N {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let (vals, vecs) = sym_eigen(&ata);
    let mut v = [0.0; N];
    for (i, out) in v.iter_mut().enumerate() {
        *out = vecs[i][0];
    }
    let ratio = if vals[N - 1].abs() < 1e-300 {
        1.0
    } else {
        vals[0].abs() / vals[N - 1].abs()
    };
    (v, ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot_z(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn sym_eigen_diagonalizes() {
        let a = [[2.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 1.0]];
        let (vals, vecs) = sym_eigen(&a);
        // Reconstruct A = V diag V^T
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += vecs[i][k] * vals[k] * vecs[j][k];
                }
                assert!((acc - a[i][j]).abs() < 1e-12, "A mismatch at {i},{j}");
            }
        }
        assert!(vals[0] <= vals[1] && vals[1] <= vals[2]);
    }

    #[test]
    fn polar_recovers_rotation_from_noise() {
        let r = rot_z(33.0);
        let mut m = r;
        m[0][1] += 1e-3;
        m[2][0] -= 5e-4;
        let q = polar_rotation(&m);
        assert!(orthonormality_residual(&q) < 1e-12);
        assert!(det3(&q) > 0.0);
        for i in 0..3 {
            for j in 0..3 {
                assert!((q[i][j] - r[i][j]).abs() < 5e-3);
            }
        }
    }

    #[test]
    fn polar_of_rotation_is_identity_map() {
        let r = rot_z(-71.5);
        let q = polar_rotation(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((q[i][j] - r[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inv3_matches_identity() {
        let m = [[2.0, 0.0, 1.0], [0.5, 1.0, 0.0], [0.0, 0.3, 1.0]];
        let mi = inv3(&m).unwrap();
        let prod = mat3_mul(&m, &mi);
        for i in 0..3 {
            for j in 0..3 {
                let t = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i][j] - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn min_eigvec_finds_null_direction() {
        // Rows all orthogonal to (1,2,3)/norm.
        let n = normalize([1.0, 2.0, 3.0]);
        let rows = vec![
            [n[1], -n[0], 0.0],
            [0.0, n[2], -n[1]],
            [n[2], 0.0, -n[0]],
        ];
        let (v, ratio) = min_eigvec_normal(&rows);
        let cosang = dot(normalize(v), n).abs();
        assert!(cosang > 1.0 - 1e-10, "cos angle {cosang}");
        assert!(ratio < 1e-12);
    }
}
