//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{HasParams, ParamId};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Parameters with more elements than this are checked on a seeded random subsample.
    pub max_elements_per_param: usize,
    /// Lower bound on the relative-error denominator, so near-zero gradients
    /// are compared absolutely.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_elements_per_param: usize::MAX,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{} {} checked={} max_rel_err={:.3e}",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.checked,
                p.max_relative_error
            )?;
        }
        write!(
            f,
            "{}: max relative error {:.3e} (tolerance {:.1e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_relative_error(),
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_loss<M, F>(model: &M, loss_fn: &mut F) -> Result<f64>
where
    M: HasParams<f64>,
    F: FnMut(&M, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(model, &mut tape)?;
    Ok(tape.value(loss).item())
}

/// Analytic gradient of every parameter, in store order. Existing gradients are cleared.
pub fn analytic_gradients<M, F>(model: &mut M, mut loss_fn: F) -> Result<Vec<Tensor<f64>>>
where
    M: HasParams<f64>,
    F: FnMut(&M, &mut Tape<f64>) -> Result<Var>,
{
    model.params_mut().zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(model, &mut tape)?;
    tape.backward(loss, model.params_mut())?;
    let grads = model.params().iter().map(|(_, p)| p.grad.clone()).collect();
    model.params_mut().zero_grad();
    Ok(grads)
}

/// Compares supplied analytic gradients against central differences of `loss_fn`.
pub fn compare_gradients<M, F>(
    model: &mut M,
    mut loss_fn: F,
    analytic: &[Tensor<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: HasParams<f64>,
    F: FnMut(&M, &mut Tape<f64>) -> Result<Var>,
{
    let first = eval_loss(model, &mut loss_fn)?;
    let second = eval_loss(model, &mut loss_fn)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::Determinism { first, second });
    }
    if analytic.len() != model.params().len() {
        return Err(Error::contract("one analytic gradient per parameter required"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let targets: Vec<(usize, String, usize, bool)> = model
        .params()
        .iter()
        .map(|(id, p)| (id.index(), p.name.clone(), p.value.len(), p.trainable))
        .collect();
    let mut checks = Vec::new();
    for (idx, name, len, trainable) in targets {
        if !trainable {
            continue;
        }
        let elements: Vec<usize> = if len > cfg.max_elements_per_param {
            let mut picked =
                rand::seq::index::sample(&mut rng, len, cfg.max_elements_per_param).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..len).collect()
        };
        let mut worst = (0.0f64, 0usize);
        for &e in &elements {
            let id = ParamId(idx);
            let original = model.params().value(id).data()[e];
            model.params_mut().get_mut(id).value.data_mut()[e] = original + cfg.step;
            let plus = eval_loss(model, &mut loss_fn);
            model.params_mut().get_mut(id).value.data_mut()[e] = original - cfg.step;
            let minus = eval_loss(model, &mut loss_fn);
            model.params_mut().get_mut(id).value.data_mut()[e] = original;
            let numeric = (plus? - minus?) / (2.0 * cfg.step);
            let err = relative_error(analytic[idx].data()[e], numeric, cfg.denominator_floor);
            if err > worst.0 || err.is_nan() {
                worst = (err, e);
            }
        }
        checks.push(ParamCheck {
            name,
            checked: elements.len(),
            max_relative_error: worst.0,
            worst_index: worst.1,
            passed: worst.0 < cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        params: checks,
        tolerance: cfg.tolerance,
    })
}

/// Full check: analytic gradients via the tape, numeric via central differences.
pub fn finite_diff_check<M, F>(
    model: &mut M,
    mut loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: HasParams<f64>,
    F: FnMut(&M, &mut Tape<f64>) -> Result<Var>,
{
    let analytic = analytic_gradients(model, &mut loss_fn)?;
    compare_gradients(model, loss_fn, &analytic, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn quadratic(store: &ParamStore<f64>, tape: &mut Tape<f64>) -> Result<Var> {
        let id = store.id("theta").unwrap();
        let p = tape.param(store, id);
        let sq = tape.hadamard(p, p)?;
        tape.sum(sq)
    }

    fn quadratic_store() -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.add("theta", Tensor::vector(vec![1.0, 2.0])).unwrap();
        store
    }

    #[test]
    fn quadratic_passes_tightly() {
        let mut store = quadratic_store();
        let analytic = analytic_gradients(&mut store, quadratic).unwrap();
        assert_eq!(analytic[0].data(), &[2.0, 4.0]);
        let report =
            compare_gradients(&mut store, quadratic, &analytic, &GradCheckConfig::default())
                .unwrap();
        assert!(report.passed());
        assert!(report.max_relative_error() < 1e-9, "{report}");
        // parameters restored after perturbation
        assert_eq!(store.value(store.id("theta").unwrap()).data(), &[1.0, 2.0]);
    }

    #[test]
    fn corrupted_gradient_is_reported() {
        let mut store = quadratic_store();
        let mut analytic = analytic_gradients(&mut store, quadratic).unwrap();
        analytic[0].data_mut().iter_mut().for_each(|g| *g *= 2.0);
        let report =
            compare_gradients(&mut store, quadratic, &analytic, &GradCheckConfig::default())
                .unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }

    #[test]
    fn nondeterministic_closure_is_rejected() {
        let mut store = quadratic_store();
        let mut calls = 0.0;
        let res = finite_diff_check(
            &mut store,
            |s: &ParamStore<f64>, t: &mut Tape<f64>| {
                calls += 1.0;
                let loss = quadratic(s, t)?;
                t.scale(loss, calls)
            },
            &GradCheckConfig::default(),
        );
        assert!(matches!(res, Err(Error::Determinism { .. })));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = quadratic_store();
        store.add("frozen", Tensor::vector(vec![3.0])).unwrap();
        store.set_trainable_where(|n| n == "theta");
        let report = finite_diff_check(&mut store, quadratic, &GradCheckConfig::default()).unwrap();
        assert_eq!(report.params.len(), 1);
    }

    #[test]
    fn subsampling_caps_checked_elements() {
        let mut store = ParamStore::new();
        store
            .add("theta", Tensor::vector((0..50).map(|i| i as f64 / 10.0).collect()))
            .unwrap();
        let cfg = GradCheckConfig {
            max_elements_per_param: 7,
            ..Default::default()
        };
        let report = finite_diff_check(&mut store, quadratic, &cfg).unwrap();
        assert_eq!(report.params[0].checked, 7);
        assert!(report.passed());
    }
}
