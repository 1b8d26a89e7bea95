//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::registry::{GradStore, ParamRegistry};

#[derive(Debug, Clone)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
    pub ok: bool,
}

impl FdReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{:30} max_rel_err = {:.3e}  {}\n",
                e.name,
                e.max_rel_err,
                if e.ok { "ok" } else { "FAIL" }
            ));
        }
        out.push_str(&format!(
            "overall max_rel_err = {:.3e}  {}\n",
            self.max_rel_err,
            if self.ok { "ok" } else { "FAIL" }
        ));
        out
    }
}

fn rel_err(fd: f64, an: f64) -> f64 {
    // the denominator floor keeps central-difference roundoff (absolute
    // noise ~1e-10 at epsilon 1e-5) from registering as a large relative
    // error on near-zero gradients; real backward bugs with any visible
    // absolute effect still blow past the tolerances used here
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

/// Compares analytic gradients against central differences of `f` over every
/// element of every registered parameter. `f` must be deterministic.
pub fn finite_diff_check<F>(
    mut f: F,
    registry: &mut ParamRegistry,
    analytic: &GradStore,
    epsilon: f64,
    tolerance: f64,
) -> Result<FdReport>
where
    F: FnMut(&ParamRegistry) -> Result<f64>,
{
    assert!(epsilon > 0.0);
    let mut entries = Vec::new();
    let mut worst = 0.0f64;
    for id in registry.ids().collect::<Vec<_>>() {
        let n = registry.get(id).len();
        let mut param_worst = 0.0f64;
        for k in 0..n {
            let orig = registry.get(id).data()[k];
            registry.get_mut(id).data_mut()[k] = orig + epsilon;
            let f_plus = f(registry)?;
            registry.get_mut(id).data_mut()[k] = orig - epsilon;
            let f_minus = f(registry)?;
            registry.get_mut(id).data_mut()[k] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite evaluation while checking {}[{}]",
                    registry.name(id),
                    k
                )));
            }
            let g_fd = (f_plus - f_minus) / (2.0 * epsilon);
            let g_an = analytic.get(id).data()[k];
            param_worst = param_worst.max(rel_err(g_fd, g_an));
        }
        worst = worst.max(param_worst);
        entries.push(FdEntry {
            name: registry.name(id).to_string(),
            max_rel_err: param_worst,
            ok: param_worst <= tolerance,
        });
    }
    Ok(FdReport {
        ok: entries.iter().all(|e| e.ok),
        entries,
        max_rel_err: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn quad_setup(analytic_g: f64) -> (ParamRegistry, GradStore) {
        let mut reg = ParamRegistry::new();
        let id = reg.register("w", Tensor::from_vec(vec![3.0]), false).unwrap();
        let mut grads = GradStore::zeros_like(&reg);
        grads.get_mut(id).data_mut()[0] = analytic_g;
        (reg, grads)
    }

    #[test]
    fn quadratic_exact() {
        let (mut reg, grads) = quad_setup(6.0);
        let report = finite_diff_check(
            |r| Ok(r.get(r.lookup("w").unwrap()).data()[0].powi(2)),
            &mut reg,
            &grads,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(report.ok);
        assert!(report.max_rel_err < 1e-6);
    }

    #[test]
    fn wrong_gradient_flagged() {
        let (mut reg, grads) = quad_setup(5.0);
        let report = finite_diff_check(
            |r| Ok(r.get(r.lookup("w").unwrap()).data()[0].powi(2)),
            &mut reg,
            &grads,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(!report.ok);
        // |6 - 5| / 6 ≈ 0.1667
        assert!((report.max_rel_err - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn constant_function_passes() {
        let (mut reg, grads) = quad_setup(0.0);
        let report = finite_diff_check(|_| Ok(7.0), &mut reg, &grads, 1e-5, 1e-6).unwrap();
        assert!(report.ok);
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_reported() {
        let (mut reg, grads) = quad_setup(0.0);
        let res = finite_diff_check(|_| Ok(f64::NAN), &mut reg, &grads, 1e-5, 1e-6);
        assert!(matches!(res, Err(Error::Numeric(_))));
    }
}
