//! Central finite-difference checks of tape gradients.

use super::{ParamStore, Result, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-9;

/// Central differences of `f` at `x`.
pub fn central_difference(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let fp = f(&x);
            x[i] = orig - h;
            let fm = f(&x);
            x[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Agreement within `REL_TOL` relative or `ABS_TOL` absolute, whichever is looser.
pub fn within_tolerance(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= (REL_TOL * analytic.abs().max(numeric.abs())).max(ABS_TOL)
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub failures: usize,
    /// Over coordinates with gradient magnitude above `ABS_TOL / REL_TOL`.
    pub worst_rel: f64,
    pub worst_abs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.failures == 0)
    }

    pub fn coords(&self) -> usize {
        self.params.iter().map(|p| p.coords).sum()
    }

    pub fn worst_rel(&self) -> f64 {
        self.params.iter().map(|p| p.worst_rel).fold(0.0, f64::max)
    }
}

/// Compares analytic and numeric gradients of `loss` for every coordinate of
/// every parameter in `store`. `loss` must rebuild the computation on the
/// fresh tape it is handed.
pub fn check_params(
    store: &mut ParamStore,
    mut loss: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<GradReport> {
    check_params_with(store, Tape::new, &mut loss)
}

pub fn check_params_with(
    store: &mut ParamStore,
    make_tape: impl Fn() -> Tape,
    loss: &mut impl FnMut(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<GradReport> {
    store.clear_grads();
    let mut tape = make_tape();
    let l = loss(&mut tape, store)?;
    tape.backward(l)?.accumulate_into(&tape, store);
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.grad(id).map(|g| g.to_vec()).unwrap_or_default())
        .collect();
    store.clear_grads();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss(&mut t, store)?;
        Ok(t.value(l).item())
    };

    let mut report = GradReport::default();
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        let mut check = ParamCheck {
            name: store.name(id).to_string(),
            coords: n,
            failures: 0,
            worst_rel: 0.0,
            worst_abs: 0.0,
        };
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + STEP;
            let fp = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - STEP;
            let fm = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * STEP);
            let a = analytic[id.0].get(k).copied().unwrap_or(0.0);
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if scale > ABS_TOL / REL_TOL {
                check.worst_rel = check.worst_rel.max(diff / scale);
            }
            check.worst_abs = check.worst_abs.max(diff);
            if !within_tolerance(a, numeric) {
                check.failures += 1;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
