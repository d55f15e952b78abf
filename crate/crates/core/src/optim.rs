//! Scalar minimization (grid scan + golden section) and monotone bisection.

use crate::{Error, Result};

/// Coarse grid followed by golden-section refinement around every discrete
/// local minimum of the grid. Ties go to the smallest abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGolden {
    pub grid_points: usize,
    pub tol: f64,
}

impl Default for GridGolden {
    fn default() -> Self {
        GridGolden {
            grid_points: 512,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub value: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

impl GridGolden {
    pub fn minimize<F>(&self, mut f: F, lo: f64, hi: f64) -> Result<ScalarMin>
    where
        F: FnMut(f64) -> f64,
    {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::param("interval", format!("[{lo}, {hi}]")));
        }
        let mut eval = |x: f64| -> Result<f64> {
            let v = f(x);
            if v.is_nan() {
                Err(Error::NumericFailure {
                    iteration: 0,
                    what: format!("objective at {x} is NaN"),
                })
            } else {
                Ok(v)
            }
        };
        if hi == lo {
            return Ok(ScalarMin { x: lo, value: eval(lo)? });
        }
        let m = self.grid_points.max(3);
        let h = (hi - lo) / (m - 1) as f64;
        let xs: Vec<f64> = (0..m)
            .map(|i| if i == m - 1 { hi } else { lo + h * i as f64 })
            .collect();
        let mut vs = Vec::with_capacity(m);
        for &x in &xs {
            vs.push(eval(x)?);
        }
        let mut best = ScalarMin { x: xs[0], value: vs[0] };
        let better = |cand: ScalarMin, best: ScalarMin| {
            cand.value < best.value || (cand.value == best.value && cand.x < best.x)
        };
        for i in 1..m {
            let c = ScalarMin { x: xs[i], value: vs[i] };
            if better(c, best) {
                best = c;
            }
        }
        for i in 0..m {
            let left_ok = i == 0 || vs[i] <= vs[i - 1];
            let right_ok = i == m - 1 || vs[i] <= vs[i + 1];
            if !(left_ok && right_ok) {
                continue;
            }
            let a = xs[i.saturating_sub(1)];
            let b = xs[(i + 1).min(m - 1)];
            let cand = golden(&mut eval, a, b, self.tol)?;
            if better(cand, best) {
                best = cand;
            }
        }
        Ok(best)
    }
}

fn golden<F>(eval: &mut F, mut a: f64, mut b: f64, tol: f64) -> Result<ScalarMin>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(if fc <= fd {
        ScalarMin { x: c, value: fc }
    } else {
        ScalarMin { x: d, value: fd }
    })
}

/// Root of a nondecreasing `f` on [lo, hi] with f(lo) <= 0 <= f(hi), bisected
/// until the bracket is below `xtol` (relative to hi) or stalls in floating point.
pub fn bisect_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= xtol * hi.abs().max(1e-300) {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let r = GridGolden::default()
            .minimize(|x| (x - 0.3137).powi(2) + 1.0, 0.0, 2.0)
            .unwrap();
        assert!((r.x - 0.3137).abs() < 1e-8);
        assert!((r.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_objective_returns_left_end() {
        let r = GridGolden::default().minimize(|_| 4.0, 0.0, 3.0).unwrap();
        assert_eq!(r.x, 0.0);
        let r = GridGolden::default().minimize(|x| x, 0.0, 0.0).unwrap();
        assert_eq!(r.x, 0.0);
    }

    #[test]
    fn picks_global_among_local_minima() {
        // two wells, the right one deeper
        let f = |x: f64| ((x - 0.2).powi(2)).min((x - 0.8).powi(2) - 0.01);
        let r = GridGolden::default().minimize(f, 0.0, 1.0).unwrap();
        assert!((r.x - 0.8).abs() < 1e-7);
    }

    #[test]
    fn boundary_minimum() {
        let r = GridGolden::default().minimize(|x| x, 1.0, 5.0).unwrap();
        assert_eq!(r.x, 1.0);
        let r = GridGolden::default().minimize(|x| -x, 1.0, 5.0).unwrap();
        assert!((r.x - 5.0).abs() < 1e-8);
    }

    #[test]
    fn nan_is_an_error() {
        assert!(GridGolden::default().minimize(|_| f64::NAN, 0.0, 1.0).is_err());
    }

    #[test]
    fn bisection_brackets_root() {
        let (lo, hi) = bisect_increasing(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15);
        assert!(lo <= 2f64.cbrt() && 2f64.cbrt() <= hi);
        assert!(hi - lo < 1e-14);
    }
}
