use crate::error::AutodiffError;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries probed per input tensor; larger tensors are strided through.
    pub max_entries: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, max_entries: usize::MAX }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences over every input entry.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    Ok(grad_check_with(f, inputs, GradCheckOptions { eps, ..Default::default() })?.max_rel_error)
}

pub fn grad_check_with<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_tracked(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let f0 = g.value(out).item();
    let grads = g.backward(out)?;
    let floor = 1e-6 * f0.abs().max(1.0);

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, entries: 0 };
    let mut probe = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let n = inputs[ti].len();
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let orig = inputs[ti].data()[e];
            probe[ti].data_mut()[e] = orig + opts.eps;
            let fp = eval(&probe)?;
            probe[ti].data_mut()[e] = orig - opts.eps;
            let fm = eval(&probe)?;
            probe[ti].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let analytic = grads.get(*v).map_or(0.0, |t| t.data()[e]);
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
        }
    }
    Ok(report)
}

/// Gradient check with respect to every tensor of a parameter store.
pub fn grad_check_params<F>(f: F, params: &ParamStore, opts: GradCheckOptions) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var, AutodiffError>,
{
    let eval = |p: &ParamStore| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let out = f(&mut g, p)?;
        Ok(g.value(out).item())
    };
    let mut g = Graph::new();
    let out = f(&mut g, params)?;
    let f0 = g.value(out).item();
    let mut analytic = params.zeros_like();
    g.backward(out)?.accumulate_into(&mut analytic);
    let floor = 1e-6 * f0.abs().max(1.0);

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, entries: 0 };
    let mut probe = params.clone();
    for id in params.ids() {
        let n = params.get(id).len();
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        for e in (0..n).step_by(stride) {
            let orig = params.get(id).data()[e];
            probe.get_mut(id).data_mut()[e] = orig + opts.eps;
            let fp = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = orig - opts.eps;
            let fm = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic[id.index()].data()[e];
            let abs = (a - numeric).abs();
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(abs / a.abs().max(numeric.abs()).max(floor));
            report.entries += 1;
        }
    }
    Ok(report)
}
