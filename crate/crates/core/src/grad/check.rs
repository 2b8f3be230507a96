use rand::seq::index::sample;

use super::{Bound, Graph, ParamSet, Var};
use crate::error::Result;
use crate::rng;

/// Settings for [`finite_diff_check`].
#[derive(Clone, Debug)]
pub struct FdOptions {
    /// Step size relative to `max(|p|, 1)`.
    pub step: f64,
    /// Check at most this many randomly chosen entries per tensor.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
    /// One-sided slopes disagreeing by more than this (relative) mark a
    /// kink; such entries are skipped and counted.
    pub kink_tol: f64,
    /// Second differences at `h` and `h/2` agree to `O(h^2)` on smooth
    /// functions; a gap above this (scaled by `h`, relative to the slope)
    /// marks a kink inside the stencil.
    pub curvature_tol: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            max_per_tensor: None,
            seed: 0,
            kink_tol: 1e-3,
            curvature_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct FdReport {
    /// Sorted by descending `rel_err`.
    pub entries: Vec<FdEntry>,
    /// Entries skipped because they sit on a kink.
    pub kinks: usize,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.rel_err)
    }

    pub fn checked(&self) -> usize {
        self.entries.len()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare tape gradients of `f` against extrapolated central differences for every
/// entry of `params` (or a seeded sample of them).
pub fn finite_diff_check<F>(params: &ParamSet<f64>, f: F, opts: &FdOptions) -> Result<FdReport>
where
    F: Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
{
    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(p);
        let loss = f(&mut g, &b)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = f(&mut g, &bound)?;
    let f0 = g.value(loss).item();
    let grads = g.backward(loss)?.params();

    let mut work = params.clone();
    let mut report = FdReport::default();
    for (t_idx, (name, t)) in params.iter().enumerate() {
        let indices: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < t.len() => {
                let mut r = rng::stream(opts.seed, "fd", t_idx as u64);
                let mut v = sample(&mut r, t.len(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..t.len()).collect(),
        };
        let ga = grads.get(name)?;
        for i in indices {
            let p = t.data()[i];
            let h = opts.step * p.abs().max(1.0);
            let mut at = |v: f64| -> Result<f64> {
                work.get_mut(name).expect("same names").data_mut()[i] = v;
                eval(&work)
            };
            let (fp, fm) = (at(p + h)?, at(p - h)?);
            let (fp2, fm2) = (at(p + h / 2.0)?, at(p - h / 2.0)?);
            work.get_mut(name).expect("same names").data_mut()[i] = p;

            let (sp, sm) = ((fp - f0) / h, (f0 - fm) / h);
            let d2 = (fp - 2.0 * f0 + fm) / (h * h);
            let d2_half = (fp2 - 2.0 * f0 + fm2) / (h * h / 4.0);
            let slope = sp.abs().max(sm.abs());
            if (sp - sm).abs() > opts.kink_tol * slope + 1e-7
                || (d2 - d2_half).abs() * h > opts.curvature_tol * slope + 1e-9
            {
                report.kinks += 1;
                continue;
            }
            // Richardson extrapolation of two central differences.
            let numeric = (4.0 * (fp2 - fm2) / h - (fp - fm) / (2.0 * h)) / 3.0;
            let analytic = ga.data()[i];
            report.entries.push(FdEntry {
                param: name.clone(),
                index: i,
                analytic,
                numeric,
                rel_err: rel_err(analytic, numeric),
            });
        }
    }
    report
        .entries
        .sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    Ok(report)
}
