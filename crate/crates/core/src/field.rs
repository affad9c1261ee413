//! Coefficient fields x ↦ A(x), their inverses and the sampled checks of the
//! boundedness, determinant and Lipschitz assumptions.
//!
//! Column convention: a_i(x) is the i-th column of A(x), so that the i-th
//! driving coordinate moves the state along a_i.

use crate::error::{Error, Result};

/// Dense row-major d×d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub d: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn identity(d: usize) -> Mat {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        Mat { d, a }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::Parameter("matrix must be square and nonempty".into()));
        }
        Ok(Mat { d, a: rows.concat() })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    /// Column i as a vector.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.d).map(|r| self.get(r, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d).map(|r| (0..self.d).map(|c| self.get(r, c) * x[c]).sum()).collect()
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        let d = self.d;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let v = self.get(i, k);
                for j in 0..d {
                    a[i * d + j] += v * o.get(k, j);
                }
            }
        }
        Mat { d, a }
    }

    /// Determinant and inverse by Gauss–Jordan with partial pivoting.
    pub fn det_inv(&self) -> (f64, Option<Mat>) {
        let d = self.d;
        let mut m = self.a.clone();
        let mut inv = Mat::identity(d).a;
        let mut det = 1.0;
        for col in 0..d {
            let piv = (col..d).max_by(|&a, &b| m[a * d + col].abs().total_cmp(&m[b * d + col].abs())).unwrap();
            if m[piv * d + col] == 0.0 {
                return (0.0, None);
            }
            if piv != col {
                for j in 0..d {
                    m.swap(piv * d + j, col * d + j);
                    inv.swap(piv * d + j, col * d + j);
                }
                det = -det;
            }
            let p = m[col * d + col];
            det *= p;
            for j in 0..d {
                m[col * d + j] /= p;
                inv[col * d + j] /= p;
            }
            for r in 0..d {
                if r != col {
                    let f = m[r * d + col];
                    if f != 0.0 {
                        for j in 0..d {
                            m[r * d + j] -= f * m[col * d + j];
                            inv[r * d + j] -= f * inv[col * d + j];
                        }
                    }
                }
            }
        }
        (det, Some(Mat { d, a: inv }))
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// 2×2 matrix in row-major order, used on hot paths.
pub type M2 = [[f64; 2]; 2];

#[inline]
pub fn m2_det(m: &M2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[inline]
pub fn m2_inv(m: &M2) -> M2 {
    let d = m2_det(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

#[inline]
pub fn m2_mul(a: &M2, b: &M2) -> M2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

#[inline]
pub fn m2_vec(a: &M2, x: [f64; 2]) -> [f64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// Samples of a 2-D matrix field on a uniform grid, bilinearly interpolated
/// and held constant outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedField {
    pub x0: [f64; 2],
    pub dx: [f64; 2],
    pub n: [usize; 2],
    /// values[i * n[1] + j] = A at (x0[0] + i dx[0], x0[1] + j dx[1]).
    pub values: Vec<M2>,
}

impl TabulatedField {
    fn eval(&self, x: [f64; 2]) -> M2 {
        let mut idx = [0usize; 2];
        let mut frac = [0.0; 2];
        for k in 0..2 {
            let u = ((x[k] - self.x0[k]) / self.dx[k]).clamp(0.0, (self.n[k] - 1) as f64);
            let i = (u.floor() as usize).min(self.n[k].saturating_sub(2));
            idx[k] = i;
            frac[k] = u - i as f64;
        }
        let at = |i: usize, j: usize| self.values[i * self.n[1] + j];
        let (i, j) = (idx[0], idx[1]);
        let (s, t) = (frac[0], frac[1]);
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = (1.0 - s) * (1.0 - t) * at(i, j)[r][c]
                    + s * (1.0 - t) * at(i + 1, j)[r][c]
                    + (1.0 - s) * t * at(i, j + 1)[r][c]
                    + s * t * at(i + 1, j + 1)[r][c];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Identity,
    Constant(Mat),
    Diagonal(Vec<f64>),
    /// Rotation of the first two coordinates by θ(x) = θ₀/(1 + |x|²).
    Rotation { theta0: f64 },
    /// I + κ e^{−|x − c|²/ℓ²} E.
    Bump { kappa: f64, center: Vec<f64>, length: f64, pattern: Mat },
    Tabulated(TabulatedField),
}

/// A(x) together with its declared (A0) constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub dim: usize,
    pub kind: FieldKind,
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
}

impl CoefficientField {
    pub fn new(dim: usize, kind: FieldKind, eta1: f64, eta2: f64, eta3: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Parameter(format!("dimension must be at least 2, got {dim}")));
        }
        if !(eta1 >= 1.0 && eta3 >= 1.0 && eta2 > 0.0) {
            return Err(Error::Parameter("need eta1 ≥ 1, eta3 ≥ 1 and eta2 > 0".into()));
        }
        match &kind {
            FieldKind::Constant(m) if m.d != dim => return Err(Error::Parameter("constant matrix has wrong size".into())),
            FieldKind::Diagonal(v) if v.len() != dim => return Err(Error::Parameter("diagonal has wrong length".into())),
            FieldKind::Bump { pattern, center, .. } if pattern.d != dim || center.len() != dim => {
                return Err(Error::Parameter("bump pattern/center have wrong size".into()))
            }
            FieldKind::Tabulated(_) if dim != 2 => {
                return Err(Error::Unsupported("tabulated fields are two-dimensional".into()))
            }
            _ => {}
        }
        Ok(CoefficientField { dim, kind, eta1, eta2, eta3 })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(dim, FieldKind::Identity, 1.0, 1.0, 1.0)
    }

    pub fn rotation(theta0: f64) -> Result<Self> {
        Self::new(2, FieldKind::Rotation { theta0 }, 1.0, 1.0, 1.0)
    }

    pub fn constant(m: Mat) -> Result<Self> {
        let eta1 = m.max_abs().max(1.0);
        let (det, _) = m.det_inv();
        if !(det > 0.0) {
            return Err(Error::Parameter("constant field must have positive determinant".into()));
        }
        Self::new(m.d, FieldKind::Constant(m), eta1, det, 1.0)
    }

    pub fn diagonal(v: Vec<f64>) -> Result<Self> {
        let eta1 = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let det: f64 = v.iter().product();
        Self::new(v.len(), FieldKind::Diagonal(v), eta1, det, 1.0)
    }

    /// Whether A is independent of x.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FieldKind::Identity | FieldKind::Constant(_) | FieldKind::Diagonal(_))
    }

    /// A(x) for any dimension.
    pub fn a(&self, x: &[f64]) -> Mat {
        let d = self.dim;
        match &self.kind {
            FieldKind::Identity => Mat::identity(d),
            FieldKind::Constant(m) => m.clone(),
            FieldKind::Diagonal(v) => {
                let mut m = Mat::identity(d);
                for i in 0..d {
                    m.a[i * d + i] = v[i];
                }
                m
            }
            FieldKind::Rotation { theta0 } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let th = theta0 / (1.0 + r2);
                let (s, c) = th.sin_cos();
                let mut m = Mat::identity(d);
                m.a[0] = c;
                m.a[1] = -s;
                m.a[d] = s;
                m.a[d + 1] = c;
                m
            }
            FieldKind::Bump { kappa, center, length, pattern } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                let b = kappa * (-r2 / (length * length)).exp();
                let mut m = Mat::identity(d);
                for k in 0..d * d {
                    m.a[k] += b * pattern.a[k];
                }
                m
            }
            FieldKind::Tabulated(t) => {
                let v = t.eval([x[0], x[1]]);
                Mat { d: 2, a: vec![v[0][0], v[0][1], v[1][0], v[1][1]] }
            }
        }
    }

    /// Fast path for d = 2.
    #[inline]
    pub fn a2(&self, x: [f64; 2]) -> M2 {
        match &self.kind {
            FieldKind::Rotation { theta0 } => {
                let th = theta0 / (1.0 + x[0] * x[0] + x[1] * x[1]);
                let (s, c) = th.sin_cos();
                [[c, -s], [s, c]]
            }
            FieldKind::Identity => [[1.0, 0.0], [0.0, 1.0]],
            FieldKind::Tabulated(t) => t.eval(x),
            _ => {
                let m = self.a(&x);
                [[m.a[0], m.a[1]], [m.a[2], m.a[3]]]
            }
        }
    }

    /// B(x) = A(x)⁻¹ with the determinant guard η₂/2.
    pub fn b(&self, x: &[f64]) -> Result<(f64, Mat)> {
        let (det, inv) = self.a(x).det_inv();
        if !(det >= 0.5 * self.eta2) {
            return Err(Error::Domain(format!("det A = {det:.3e} below eta2/2 at {x:?}")));
        }
        Ok((det, inv.expect("nonsingular")))
    }
}

/// Inverse field B = A⁻¹ with a sampled bound on ‖B‖∞.
#[derive(Debug, Clone)]
pub struct InverseField<'a> {
    pub field: &'a CoefficientField,
    pub b_sup: f64,
}

impl<'a> InverseField<'a> {
    pub fn new(field: &'a CoefficientField, samples: &[Vec<f64>]) -> Result<Self> {
        let mut b_sup = 0.0f64;
        for x in samples {
            let (_, b) = field.b(x)?;
            b_sup = b_sup.max(b.max_abs());
        }
        Ok(InverseField { field, b_sup })
    }

    /// Largest deviation |A(x)B(x) − I| over the samples.
    pub fn identity_defect(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut worst = 0.0f64;
        for x in samples {
            let a = self.field.a(x);
            let (_, b) = self.field.b(x)?;
            let p = a.mul(&b);
            let id = Mat::identity(a.d);
            for k in 0..p.a.len() {
                worst = worst.max((p.a[k] - id.a[k]).abs());
            }
        }
        Ok(worst)
    }
}

/// Uniform validation lattice: `n` points per axis on [−half, half]^d.
pub fn validation_lattice(dim: usize, half: f64, n: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect();
    let mut pts = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(pts.len() * n);
        for p in &pts {
            for &a in &axis {
                let mut q = p.clone();
                q.push(a);
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Worst-case margins of the (A0) conditions with witnessing points.
#[derive(Debug, Clone, PartialEq)]
pub struct A0Report {
    pub max_entry: f64,
    pub max_entry_at: Vec<f64>,
    pub min_det: f64,
    pub min_det_at: Vec<f64>,
    pub max_lipschitz: f64,
    pub max_lipschitz_at: (Vec<f64>, Vec<f64>),
    pub bounded: bool,
    pub determinant: bool,
    pub lipschitz: bool,
}

impl A0Report {
    pub fn passed(&self) -> bool {
        self.bounded && self.determinant && self.lipschitz
    }
}

/// Sampled check of |a_ij| ≤ η₁, det A ≥ η₂ and entrywise Lipschitz ≤ η₃
/// (difference quotients between lattice neighbours along each axis).
pub fn validate_a0(field: &CoefficientField, lattice: &[Vec<f64>]) -> Result<A0Report> {
    if lattice.is_empty() {
        return Err(Error::Parameter("validation lattice is empty".into()));
    }
    let mats: Vec<Mat> = lattice.iter().map(|x| field.a(x)).collect();
    let mut rep = A0Report {
        max_entry: 0.0,
        max_entry_at: lattice[0].clone(),
        min_det: f64::INFINITY,
        min_det_at: lattice[0].clone(),
        max_lipschitz: 0.0,
        max_lipschitz_at: (lattice[0].clone(), lattice[0].clone()),
        bounded: true,
        determinant: true,
        lipschitz: true,
    };
    for (x, m) in lattice.iter().zip(&mats) {
        let e = m.max_abs();
        if e > rep.max_entry {
            rep.max_entry = e;
            rep.max_entry_at = x.clone();
        }
        let (det, _) = m.det_inv();
        if det < rep.min_det {
            rep.min_det = det;
            rep.min_det_at = x.clone();
        }
    }
    // Neighbours: points differing in exactly one coordinate by the smallest positive spacing.
    let spacing = {
        let mut s = f64::INFINITY;
        for k in 0..field.dim {
            for p in lattice.iter().take(lattice.len().min(64)) {
                let v = (p[k] - lattice[0][k]).abs();
                if v > 1e-12 && v < s {
                    s = v;
                }
            }
        }
        s
    };
    let key = |x: &Vec<f64>| -> Vec<i64> { x.iter().map(|v| (v / spacing * 1e6).round() as i64).collect() };
    let index: std::collections::HashMap<Vec<i64>, usize> =
        lattice.iter().enumerate().map(|(i, x)| (key(x), i)).collect();
    for (i, x) in lattice.iter().enumerate() {
        for k in 0..field.dim {
            let mut y = x.clone();
            y[k] += spacing;
            if let Some(&j) = index.get(&key(&y)) {
                let q = mats[i]
                    .a
                    .iter()
                    .zip(&mats[j].a)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                    / spacing;
                if q > rep.max_lipschitz {
                    rep.max_lipschitz = q;
                    rep.max_lipschitz_at = (x.clone(), y);
                }
            }
        }
    }
    rep.bounded = rep.max_entry <= field.eta1 * (1.0 + 1e-12);
    rep.determinant = rep.min_det >= field.eta2 * (1.0 - 1e-12);
    rep.lipschitz = rep.max_lipschitz <= field.eta3 * (1.0 + 1e-12);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_round_trip() {
        let m = Mat::from_rows(&[vec![2.0, 1.0, 0.0], vec![0.5, 3.0, 1.0], vec![0.0, 1.0, 4.0]]).unwrap();
        let (det, inv) = m.det_inv();
        assert!((det - (2.0 * 11.0 - 1.0 * 2.0)).abs() < 1e-12);
        let p = m.mul(&inv.unwrap());
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_fast_path_matches_general() {
        let f = CoefficientField::rotation(0.7).unwrap();
        let x = [0.3, -1.2];
        let a = f.a(&x);
        let b = f.a2(x);
        assert_eq!([[a.a[0], a.a[1]], [a.a[2], a.a[3]]], b);
        assert!((m2_det(&b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn violating_entry_is_reported() {
        let mut m = Mat::identity(2);
        m.a[1] = 2.0;
        let f = CoefficientField::new(2, FieldKind::Constant(m), 1.0, 1.0, 1.0).unwrap();
        let rep = validate_a0(&f, &validation_lattice(2, 3.0, 5)).unwrap();
        assert!(!rep.bounded);
        assert_eq!(rep.max_entry, 2.0);
    }

    #[test]
    fn rotation_passes() {
        let f = CoefficientField::rotation(0.5).unwrap();
        let rep = validate_a0(&f, &validation_lattice(2, 3.0, 33)).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
