//! The frozen-coefficient kernel p_y(t,x) = det B(y) Π_i g_{i,t}(b_i(y)·x),
//! its envelope r_y, and per-time spectral tables used by the assembly of the
//! parametrix operators.

use num_complex::Complex64;

use crate::density::{DensityTable, EnvelopeParams, Profile, PsiTable, envelope_gtilde};
use crate::error::{Error, Result};
use crate::field::CoefficientField;
use crate::levy::LevyMeasure;

/// g_{i,t}(v) for one coordinate table with log-t interpolation between
/// tabulated times.
pub fn table_value(table: &DensityTable, t: f64, v: f64) -> Result<f64> {
    let ts = &table.times;
    let (lo, hi) = (ts[0], ts[ts.len() - 1]);
    if !(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12)) {
        return Err(Error::Range { target: t, lo, hi });
    }
    if let Some(i) = table.index_of(t) {
        return Ok(table.eval(i, v));
    }
    let k = ts.partition_point(|s| *s < t);
    let (t0, t1) = (ts[k - 1], ts[k]);
    let w = (t / t0).ln() / (t1 / t0).ln();
    Ok(((1.0 - w) * table.eval(k - 1, v) + w * table.eval(k, v)).max(0.0))
}

/// p_y(t,x) with one density table per coordinate.
pub fn frozen_density(field: &CoefficientField, tables: &[&DensityTable], t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    let d = field.dim;
    if tables.len() != d || x.len() != d || y.len() != d {
        return Err(Error::Parameter("dimension mismatch in frozen_density".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite argument".into()));
    }
    let (det_a, b) = field.b(y)?;
    let z = b.mul_vec(x);
    let mut p = 1.0 / det_a;
    for i in 0..d {
        p *= table_value(tables[i], t, z[i])?;
    }
    Ok(p)
}

/// r_y(t,x) = Π_i g̃_{i,t}(b_i(y)·x).
pub fn frozen_envelope(
    field: &CoefficientField,
    env: &EnvelopeParams,
    h_models: &[&dyn LevyMeasure],
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    let (_, b) = field.b(y)?;
    let z = b.mul_vec(x);
    let mut r = 1.0;
    for (i, m) in h_models.iter().enumerate() {
        r *= envelope_gtilde(env, *m, t, z[i])?;
    }
    Ok(r)
}

/// Orders of the separable q₀ expansion available from [`KernelTables`].
pub const MAX_EXPANSION_ORDER: usize = 3;

/// Per-time tables for one coordinate law: g^{(m)} for m ≤ order and
/// J_{n,m}(v) = ∫ s^n g^{(m)}(v + s) μ(s) ds for 1 ≤ n ≤ order, m ≤ n.
#[derive(Debug, Clone)]
pub struct KernelTables {
    pub t: f64,
    pub order: usize,
    pub g: Vec<Profile>,
    /// j[n-1][m]
    pub j: Vec<Vec<Profile>>,
    pub width: f64,
}

impl KernelTables {
    /// Needs `psi` built with at least `order` derivatives. Profiles are cut
    /// to |v| ≤ radius.
    pub fn new(psi: &PsiTable, t: f64, order: usize, radius: f64) -> Result<KernelTables> {
        if order == 0 || order > MAX_EXPANSION_ORDER || psi.derivs.len() <= order {
            return Err(Error::Parameter(format!("expansion order {order} unsupported by the psi table")));
        }
        let grid = &psi.grid;
        let n = grid.n;
        let heat: Vec<f64> = psi.psi().iter().map(|p| (-t * p).exp()).collect();
        let jn = |k: usize, p: usize| Complex64::new(0.0, -grid.xi(k)).powu(p as u32);
        let i_pow = |p: usize| Complex64::new(0.0, 1.0).powu(p as u32);
        let j0 = ((grid.half_width - radius.min(grid.half_width)) / grid.dx).floor() as usize;
        let j1 = n - j0;
        let cut = |spec: Vec<Complex64>, dspec: Vec<Complex64>| -> Profile {
            let v = grid.invert(&spec);
            let d = grid.invert(&dspec);
            Profile {
                x0: grid.x(j0),
                dx: grid.dx,
                v: v[j0..j1].iter().map(|c| c.re).collect(),
                d: d[j0..j1].iter().map(|c| c.re).collect(),
            }
        };
        let g = (0..=order)
            .map(|m| {
                let s: Vec<Complex64> = (0..n).map(|k| jn(k, m) * heat[k]).collect();
                let ds: Vec<Complex64> = (0..n).map(|k| jn(k, m + 1) * heat[k]).collect();
                cut(s, ds)
            })
            .collect();
        let j = (1..=order)
            .map(|nn| {
                (0..=nn)
                    .map(|m| {
                        let f = |k: usize, extra: usize| -i_pow(nn) * psi.derivs[nn][k] * jn(k, m + extra) * heat[k];
                        let s: Vec<Complex64> = (0..n).map(|k| f(k, 0)).collect();
                        let ds: Vec<Complex64> = (0..n).map(|k| f(k, 1)).collect();
                        cut(s, ds)
                    })
                    .collect()
            })
            .collect();
        Ok(KernelTables { t, order, g, j, width: radius })
    }

    #[inline]
    pub fn g(&self, m: usize, v: f64) -> f64 {
        self.g[m].eval(v)
    }

    #[inline]
    pub fn j(&self, n: usize, m: usize, v: f64) -> f64 {
        self.j[n - 1][m].eval(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::SpectralGrid;
    use crate::field::{CoefficientField, Mat};
    use crate::levy::LevyModel1D;
    use crate::quad::legendre;
    use crate::truncation::truncate;

    fn table() -> DensityTable {
        let tm = truncate(&LevyModel1D::truncated_stable(1.0).unwrap(), 1.0 / 40.0).unwrap();
        DensityTable::compute(&tm, &[0.1, 0.25], 2.0, 1 << 14).unwrap()
    }

    #[test]
    fn identity_and_diagonal_fields() {
        let t = table();
        let tabs = [&t, &t];
        let id = CoefficientField::identity(2).unwrap();
        let x = [0.03, -0.07];
        let p = frozen_density(&id, &tabs, 0.1, &x, &[0.0, 0.0]).unwrap();
        assert!((p - t.eval(0, x[0]) * t.eval(0, x[1])).abs() < 1e-14);
        let dg = CoefficientField::diagonal(vec![2.0, 2.0]).unwrap();
        let p = frozen_density(&dg, &tabs, 0.1, &x, &[0.5, 0.5]).unwrap();
        assert!((p - 0.25 * t.eval(0, x[0] / 2.0) * t.eval(0, x[1] / 2.0)).abs() < 1e-14);
        assert!(matches!(frozen_density(&id, &tabs, 0.5, &x, &x), Err(Error::Range { .. })));
    }

    #[test]
    fn frozen_density_integrates_to_one() {
        let t = table();
        let m = Mat::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.1]]).unwrap();
        let f = CoefficientField::constant(m).unwrap();
        // Tensor Gauss rule on [−1.5, 1.5]² with panels of width 0.01.
        let r = legendre(8);
        let mut nodes = Vec::new();
        let h = 0.01;
        for p in 0..300 {
            let a = -1.5 + p as f64 * h;
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                nodes.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
        let mut s = 0.0f64;
        for &(x1, w1) in &nodes {
            for &(x2, w2) in &nodes {
                s += w1 * w2 * frozen_density(&f, &[&t, &t], 0.25, &[x1, x2], &[0.0, 0.0]).unwrap();
            }
        }
        assert!((s - 1.0).abs() < 4e-6, "mass {s}");
    }

    #[test]
    fn kernel_tables_match_direct_convolution() {
        let tm = truncate(&LevyModel1D::truncated_stable(1.0).unwrap(), 1.0 / 40.0).unwrap();
        let grid = SpectralGrid::new(2.0, 1 << 14).unwrap();
        let psi = PsiTable::new(&tm, &grid, 2);
        let kt = KernelTables::new(&psi, 0.1, 2, 1.0).unwrap();
        let dt = DensityTable::from_psi(&tm, &psi, &[0.1]).unwrap();
        let g1 = dt.derivative_profile(0);
        // J_{2,1}(v) = ∫ s² g′(v+s) μ(s) ds by composite Gauss over (−2δ, 2δ).
        let r = legendre(16);
        let v = 0.031;
        let mut s = 0.0f64;
        let edges: Vec<f64> = (0..=400).map(|k| -0.05 + 0.1 * k as f64 / 400.0).collect();
        for e in edges.windows(2) {
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                let u = 0.5 * (e[0] + e[1]) + 0.5 * (e[1] - e[0]) * x;
                s += 0.5 * (e[1] - e[0]) * w * u * u * g1.eval(v + u) * tm.nu(u);
            }
        }
        let jv = kt.j(2, 1, v);
        assert!((jv - s).abs() < 1e-6 * s.abs().max(1.0), "{jv} vs {s}");
    }
}
