use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::HashMap;

/// A named collection of f64 parameter tensors that a gradient check can
/// enumerate and perturb in place.
pub trait ParamSet {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Tensor<f64>));
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>));

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.for_each(&mut |name, _| out.push(name.to_string()));
        out
    }
}

impl ParamSet for Vec<(String, Tensor<f64>)> {
    fn for_each(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
        for (name, t) in self {
            f(name, t);
        }
    }
    fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        for (name, t) in self {
            f(name, t);
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Analytic gradient at the entry with the worst relative error.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub tol: f64,
    pub h: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.per_param.iter().all(|p| p.pass)
    }

    pub fn failures(&self) -> usize {
        self.per_param.iter().filter(|p| !p.pass).count()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "gradient check (h={:.1e}, tol={:.1e})", self.h, self.tol)?;
        for p in &self.per_param {
            writeln!(
                f,
                "  {:<24} max_rel_err={:.3e}  {}",
                p.name,
                p.max_rel_err,
                if p.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: {} ({} of {} tensors pass)",
            if self.pass() { "PASS" } else { "FAIL" },
            self.per_param.len() - self.failures(),
            self.per_param.len()
        )
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `analytic` maps parameter name to the flat gradient; `eval` recomputes
/// the scalar objective from the (perturbed) parameters. `eval` must be
/// deterministic: two unperturbed evaluations are compared bitwise first
/// and any difference is a contract error. Per entry the relative error is
/// |g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8); a tensor passes iff its worst
/// entry is within `tol`.
pub fn finite_diff_check<P: ParamSet>(
    params: &mut P,
    analytic: &HashMap<String, Vec<f64>>,
    mut eval: impl FnMut(&P) -> Result<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let base1 = eval(params)?;
    let base2 = eval(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::Contract {
            op: "finite_diff_check",
            msg: format!("objective is not deterministic: {base1} vs {base2}"),
        });
    }

    let names = params.names();
    let mut per_param = Vec::with_capacity(names.len());

    for name in names {
        let g_ad = analytic.get(&name).ok_or_else(|| Error::Contract {
            op: "finite_diff_check",
            msg: format!("no analytic gradient for parameter {name}"),
        })?;
        let mut max_rel = 0.0f64;
        let mut worst = (0.0, 0.0);

        for (i, &g_analytic) in g_ad.iter().enumerate() {
            let original = perturb(params, &name, i, h)?;
            let plus = eval(params)?;
            set_entry(params, &name, i, original - h)?;
            let minus = eval(params)?;
            set_entry(params, &name, i, original)?;

            let g_fd = (plus - minus) / (2.0 * h);
            let denom = g_analytic.abs().max(g_fd.abs()).max(1e-8);
            let rel = (g_analytic - g_fd).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
                worst = (g_analytic, g_fd);
            }
        }

        per_param.push(ParamCheck {
            name,
            max_rel_err: max_rel,
            worst_analytic: worst.0,
            worst_numeric: worst.1,
            pass: max_rel <= tol,
        });
    }

    Ok(GradCheckReport { per_param, tol, h })
}

/// Add `h` to entry `i` of the named tensor, returning the original value.
fn perturb<P: ParamSet>(params: &mut P, name: &str, i: usize, h: f64) -> Result<f64> {
    let mut original = None;
    params.for_each_mut(&mut |n, t| {
        if n == name {
            let x = t.data()[i];
            original = Some(x);
            t.data_mut()[i] = x + h;
        }
    });
    original.ok_or_else(|| Error::Contract {
        op: "finite_diff_check",
        msg: format!("parameter {name} not found"),
    })
}

fn set_entry<P: ParamSet>(params: &mut P, name: &str, i: usize, value: f64) -> Result<()> {
    let mut found = false;
    params.for_each_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[i] = value;
            found = true;
        }
    });
    if found {
        Ok(())
    } else {
        Err(Error::Contract {
            op: "finite_diff_check",
            msg: format!("parameter {name} not found"),
        })
    }
}
