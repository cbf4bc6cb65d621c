//! Central finite-difference gradient checking.
//!
//! The checker only ever reads forward values off the tape, so it is
//! independent of every backward rule it is used to verify.

use rand::Rng;

use super::{Matrix, Tape, Var};

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, floor)` over all entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

/// Denominator floor of the relative error, so entries whose true gradient is
/// zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares tape gradients of `build` against central differences with step `h`.
///
/// `build` must create a scalar from the leaves it is handed, and must be a
/// pure function of their values.
pub fn check_gradients<F>(inputs: &[Matrix], h: f64, build: F) -> GradReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |perturbed: &[Matrix]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|m| t.param(m.clone())).collect();
        let out = build(&mut t, &vs);
        t.value(out).item().expect("scalar loss")
    };

    let mut report = GradReport::default();
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for e in 0..inputs[k].data().len() {
            let orig = inputs[k].data()[e];
            work[k].data_mut()[e] = orig + h;
            let plus = eval(&work);
            work[k].data_mut()[e] = orig - h;
            let minus = eval(&work);
            work[k].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[e];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.entries += 1;
        }
    }
    report
}

/// Matrix with entries uniform in `[-scale, scale]`.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}
