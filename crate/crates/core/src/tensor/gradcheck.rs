//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradFault, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the relative error.
    pub tol: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`. Keeps entries whose
    /// true gradient is zero from dividing round-off by round-off.
    pub floor: f64,
    /// Raises the floor to `loss_floor · |f(x)|`. Central differences carry
    /// round-off of order `ε·|f|/h`, so entries whose true gradient is
    /// below that (including exact zeros) are compared on this scale.
    pub loss_floor: f64,
    /// Check at most this many entries per input (seeded sample); `None` checks all.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Corrupts the analytic backward pass (mutation testing).
    pub fault: Option<GradFault>,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            loss_floor: 0.0,
            max_entries: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamReport>,
    /// Set when evaluation itself failed (non-finite intermediate, shape error).
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamReport> {
        self.params.iter().filter(|p| !p.passed)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{}\t{:.3e}\t{}\t{}",
                p.name,
                p.max_rel_err,
                p.checked,
                if p.passed { "pass" } else { "FAIL" }
            )?;
        }
        if let Some(msg) = &self.failure {
            writeln!(f, "error\t{msg}")?;
        }
        write!(
            f,
            "overall\t{:.3e}\t{}",
            self.max_rel_err(),
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

fn evaluate<F>(f: &F, inputs: &[(String, Tensor<f64>)]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.set_check_finite(true);
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check function must be scalar-valued, got {:?}",
            v.shape()
        )));
    }
    Ok(v.item())
}

/// Compares the tape's gradients of the scalar function `f` against central
/// differences, input by input.
pub fn grad_check<F>(f: F, inputs: &[(String, Tensor<f64>)], cfg: &GradCheck) -> GradCheckReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut report = GradCheckReport {
        tol: cfg.tol,
        params: Vec::new(),
        failure: None,
    };
    let mut tape = Tape::new();
    tape.set_check_finite(true);
    tape.set_fault(cfg.fault);
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let analytic = match f(&mut tape, &vars).and_then(|loss| tape.backward(loss)) {
        Ok(()) => vars
            .iter()
            .zip(inputs)
            .map(|(&v, (_, t))| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect::<Vec<_>>(),
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };

    let floor = match evaluate(&f, inputs) {
        Ok(l) => cfg.floor.max(cfg.loss_floor * l.abs()),
        Err(e) => {
            report.failure = Some(e.to_string());
            return report;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work: Vec<(String, Tensor<f64>)> = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        let n = work[i].1.len();
        let entries: Vec<usize> = match cfg.max_entries {
            Some(k) if k < n => {
                let mut e = sample(&mut rng, n, k).into_vec();
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        let mut pr = ParamReport {
            name: work[i].0.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: entries.len(),
            passed: true,
        };
        for &e in &entries {
            let orig = work[i].1.data()[e];
            work[i].1.data_mut()[e] = orig + cfg.h;
            let plus = evaluate(&f, &work);
            work[i].1.data_mut()[e] = orig - cfg.h;
            let minus = evaluate(&f, &work);
            work[i].1.data_mut()[e] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(err), _) | (_, Err(err)) => {
                    report.failure = Some(format!("{} entry {e}: {err}", pr.name));
                    pr.passed = false;
                    break;
                }
            };
            let numeric = (plus - minus) / (2.0 * cfg.h);
            let a = grad.data()[e];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let err = (a - numeric).abs() / denom;
            if err > pr.max_rel_err || err.is_nan() {
                pr.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                pr.worst_index = e;
                pr.analytic = a;
                pr.numeric = numeric;
            }
        }
        pr.passed &= pr.max_rel_err <= cfg.tol;
        report.params.push(pr);
    }
    report
}
