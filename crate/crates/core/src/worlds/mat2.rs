//! Closed-form 2x2 symmetric matrix helpers.

pub type Mat2 = [[f64; 2]; 2];

pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

pub fn inverse(m: &Mat2) -> Option<Mat2> {
    let d = det(m);
    if !(d.abs() > 0.0) || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

pub fn add_iso(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] + s, m[0][1]], [m[1][0], m[1][1] + s]]
}

pub fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn apply(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

pub fn is_spd(m: &Mat2) -> bool {
    m.iter().flatten().all(|v| v.is_finite())
        && (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs())
        && m[0][0] > 0.0
        && det(m) > 0.0
}

/// Lower Cholesky factor of an SPD matrix.
pub fn cholesky(m: &Mat2) -> Mat2 {
    let l00 = m[0][0].sqrt();
    let l10 = m[1][0] / l00;
    let l11 = (m[1][1] - l10 * l10).sqrt();
    [[l00, 0.0], [l10, l11]]
}

/// Principal square root of a symmetric PSD matrix:
/// `sqrt(M) = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))`.
pub fn sqrt_psd(m: &Mat2) -> Mat2 {
    let s = det(m).max(0.0).sqrt();
    let t = (trace(m) + 2.0 * s).sqrt();
    if t == 0.0 {
        return [[0.0; 2]; 2];
    }
    [
        [(m[0][0] + s) / t, m[0][1] / t],
        [m[1][0] / t, (m[1][1] + s) / t],
    ]
}
