//! Quadrature building blocks: Gauss–Legendre rules (via `gauss-quad`),
//! a globally adaptive Gauss–Kronrod 7/15 integrator, and helpers for
//! composite rules on geometric panels.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn legendre(n: usize) -> Rule {
        let n = n.max(1);
        let gl = GaussLegendre::new(n.try_into().expect("n >= 1"));
        let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Rule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Nodes/weights mapped to [a, b], appended to the output vectors.
    pub fn push_mapped(&self, a: f64, b: f64, xs: &mut Vec<f64>, ws: &mut Vec<f64>) {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            xs.push(c + h * x);
            ws.push(h * w);
        }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(c + h * x);
        }
        s * h
    }
}

/// Shared rules for the orders used throughout the crate.
pub fn legendre(n: usize) -> &'static Rule {
    static CACHE: OnceLock<Vec<Rule>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| (0..=64).map(Rule::legendre).collect());
    assert!(n >= 1 && n <= 64, "cached Gauss-Legendre orders are 1..=64");
    &cache[n]
}

/// A composite rule (absolute nodes and weights).
#[derive(Debug, Clone, Default)]
pub struct Composite {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Composite {
    pub fn from_panels(edges: &[f64], order: usize) -> Composite {
        let rule = legendre(order);
        let mut c = Composite::default();
        for e in edges.windows(2) {
            if e[1] > e[0] {
                rule.push_mapped(e[0], e[1], &mut c.x, &mut c.w);
            }
        }
        c
    }

    pub fn sum(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.x.iter().zip(&self.w).map(|(x, w)| w * f(*x)).sum()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Panel edges on [a, b] (0 < a < b) that grow geometrically by `ratio`.
pub fn geometric_edges(a: f64, b: f64, ratio: f64) -> Vec<f64> {
    assert!(a > 0.0 && b > a && ratio > 1.0);
    let mut e = vec![a];
    let mut x = a;
    while x * ratio < b * (1.0 - 1e-12) {
        x *= ratio;
        e.push(x);
    }
    e.push(b);
    e
}

/// Panel edges on (0, b]: dyadic refinement towards the origin down to `b·2^-levels`,
/// with the innermost panel [0, b·2^-levels].
pub fn dyadic_edges_to_zero(b: f64, levels: usize) -> Vec<f64> {
    let mut e = Vec::with_capacity(levels + 2);
    e.push(0.0);
    for k in (0..=levels).rev() {
        e.push(b * 0.5f64.powi(k as i32));
    }
    e
}

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Seg {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

impl PartialEq for Seg {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl Eq for Seg {}
impl PartialOrd for Seg {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Seg {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&o.err)
    }
}

/// Tolerances for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_segments: usize,
}

impl Default for Tol {
    fn default() -> Self {
        Tol {
            abs: 1e-14,
            rel: 1e-11,
            max_segments: 4000,
        }
    }
}

/// Globally adaptive Gauss–Kronrod 7/15 on [a, b], seeded with the given
/// breakpoints (which must lie inside (a, b)). Returns the value and the
/// error estimate.
pub fn adaptive_with_breaks(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tol,
    context: &str,
) -> Result<(f64, f64)> {
    if b <= a {
        return Ok((0.0, 0.0));
    }
    let mut edges = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|x| *x > a && *x < b).collect();
    inner.sort_by(f64::total_cmp);
    edges.extend(inner);
    edges.push(b);
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    for e in edges.windows(2) {
        let (v, er) = gk15(&mut f, e[0], e[1]);
        total += v;
        total_err += er;
        heap.push(Seg { a: e[0], b: e[1], val: v, err: er });
    }
    let mut n = heap.len();
    loop {
        if !total.is_finite() {
            return Err(Error::Quadrature {
                context: context.to_string(),
                value: total,
                estimate: total_err,
            });
        }
        if total_err <= tol.abs.max(tol.rel * total.abs()) {
            return Ok((total, total_err));
        }
        if n >= tol.max_segments {
            return Err(Error::Quadrature {
                context: context.to_string(),
                value: total,
                estimate: total_err,
            });
        }
        let s = heap.pop().expect("non-empty");
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            // Interval exhausted at machine precision; accept what we have.
            return Ok((total, total_err));
        }
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        total += v1 + v2 - s.val;
        total_err += e1 + e2 - s.err;
        heap.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        heap.push(Seg { a: m, b: s.b, val: v2, err: e2 });
        n += 1;
    }
}

pub fn adaptive(f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: Tol, context: &str) -> Result<(f64, f64)> {
    adaptive_with_breaks(f, a, b, &[], tol, context)
}

/// ∫_a^∞ f by mapping x = a + (1-u)/u onto (0, 1]. `a` must be ≥ 0.
pub fn adaptive_to_infinity(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    tol: Tol,
    context: &str,
) -> Result<(f64, f64)> {
    adaptive(
        move |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let x = a + (1.0 - u) / u;
            f(x) / (u * u)
        },
        0.0,
        1.0,
        tol,
        context,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = legendre(5);
        let v = r.integrate(0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let (v, _) = adaptive(|x: f64| x.powf(-0.5), 0.0, 1.0, Tol::default(), "sqrt").unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn adaptive_infinite_tail() {
        let (v, _) = adaptive_to_infinity(|x: f64| 1.0 / (x * x), 1.0, Tol::default(), "tail").unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn composite_geometric() {
        let e = geometric_edges(1e-3, 1.0, 2.0);
        let c = Composite::from_panels(&e, 8);
        let v = c.sum(|x| 1.0 / x);
        assert!((v - 1000f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn non_convergence_is_reported() {
        let tol = Tol { abs: 0.0, rel: 1e-15, max_segments: 3 };
        let r = adaptive(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, tol, "osc");
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }
}
