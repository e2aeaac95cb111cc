//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error, so that gradients that are
    /// zero up to rounding compare in absolute terms. Rounding alone
    /// contributes about `ε·|loss| / step` ≈ 1e-10 to a central difference.
    pub floor: f64,
    /// Entries probed per parameter or input matrix (all when smaller).
    pub entries_per_tensor: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-5, floor: 1e-5, entries_per_tensor: 4 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries skipped because the function is not smooth within one step
    /// of the probe (a ReLU/max kink or a neighbor-set switch).
    pub kinks: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.clone();
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares the gradients of the scalar built by `build` against central
/// differences, over the parameters in `params` and the matrices in
/// `inputs` (passed to `build` as gradient-tracked leaves).
pub fn check_gradients<F>(
    params: &ParamStore<f64>,
    inputs: &[Matrix<f64>],
    build: F,
    opts: &GradCheckOptions,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &ParamStore<f64>, xs: &[Matrix<f64>]| -> Result<f64> {
        let mut g = Graph::new(ps);
        let vars: Vec<Var> = xs.iter().map(|m| g.input(m.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).data[0])
    };

    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let f0 = g.value(loss).data[0];
    if !f0.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }

    let mut report = GradCheckReport::default();
    let h = opts.step;
    // Differences at `h` and `h / 4`. A smooth function gives two central
    // estimates that agree to O(h²) and one-sided gaps that shrink with the
    // step; a kink inside or at the probe violates one of the two.
    let mut probe = |label: String, analytic: f64, f: &mut dyn FnMut(f64) -> Result<f64>| -> Result<()> {
        let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(h / 4.0)?, f(-h / 4.0)?);
        let c1 = (p1 - m1) / (2.0 * h);
        let c2 = (p2 - m2) / (h / 2.0);
        let gap1 = (p1 - f0) / h - (f0 - m1) / h;
        let gap2 = (p2 - f0) / (h / 4.0) - (f0 - m2) / (h / 4.0);
        let noise = 1e-9 + 1e-5 * c1.abs().max(c2.abs());
        if (c1 - c2).abs() > noise || (gap2.abs() > noise && gap2.abs() > 0.5 * gap1.abs()) {
            report.kinks += 1;
            return Ok(());
        }
        let rel = (analytic - c1).abs() / analytic.abs().max(c1.abs()).max(opts.floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = format!("{label}: analytic {analytic:e}, numeric {c1:e}");
        }
        Ok(())
    };

    for id in params.ids() {
        let len = params.value(id).data.len();
        let picks = sample(rng, len, opts.entries_per_tensor.min(len));
        for e in picks.iter() {
            let analytic = grads.param(id).map_or(0.0, |m| m.data[e]);
            let mut p = params.clone();
            let base = p.value(id).data[e];
            let mut f = |d: f64| {
                p.value_mut(id).data[e] = base + d;
                eval(&p, inputs)
            };
            probe(format!("{}[{e}]", params.name(id)), analytic, &mut f)?;
        }
    }
    for (i, m) in inputs.iter().enumerate() {
        let len = m.data.len();
        let picks = sample(rng, len, opts.entries_per_tensor.min(len));
        for e in picks.iter() {
            let analytic = grads.wrt(vars[i]).map_or(0.0, |m| m.data[e]);
            let mut xs = inputs.to_vec();
            let base = xs[i].data[e];
            let mut f = |d: f64| {
                xs[i].data[e] = base + d;
                eval(params, &xs)
            };
            probe(format!("input{i}[{e}]"), analytic, &mut f)?;
        }
    }
    Ok(report)
}
