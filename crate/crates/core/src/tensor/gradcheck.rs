//! Finite-difference verification of backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Array, Tape, TensorError, Var};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

impl GradCheck {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    pub fn sampled(max_coords: usize, seed: u64) -> Self {
        Self {
            max_coords: Some(max_coords),
            seed,
            ..Self::default()
        }
    }

    /// Compares backward gradients of the scalar `f(inputs)` against central
    /// differences `(f(x+eps) − f(x−eps)) / 2eps`, one coordinate at a time.
    /// `f` is re-run on a fresh tape for every evaluation and must be
    /// deterministic.
    pub fn run<F, E>(&self, f: F, inputs: &[Array]) -> Result<GradCheckReport, E>
    where
        F: Fn(&Tape, &[Var]) -> Result<Var, E>,
        E: From<TensorError>,
    {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
        let out = f(&tape, &vars)?;
        tape.backward(out)?;
        let analytic: Vec<Array> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, a)| tape.grad(v).unwrap_or_else(|| Array::zeros(a.shape())))
            .collect();

        let eval = |perturbed: &[Array]| -> Result<f64, E> {
            let tape = Tape::new();
            let vars: Vec<Var> = perturbed.iter().map(|a| tape.leaf(a.clone(), true)).collect();
            let out = f(&tape, &vars)?;
            Ok(tape.item(out))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst: None,
            coords_checked: 0,
        };
        let mut work: Vec<Array> = inputs.to_vec();
        for (i, input) in inputs.iter().enumerate() {
            let coords: Vec<usize> = match self.max_coords {
                Some(k) if k < input.len() => {
                    let mut c = sample(&mut rng, input.len(), k).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..input.len()).collect(),
            };
            for c in coords {
                let orig = input.data()[c];
                // divide by the step actually representable around `orig`
                let (hi, lo) = (orig + self.eps, orig - self.eps);
                work[i].data_mut()[c] = hi;
                let plus = eval(&work)?;
                work[i].data_mut()[c] = lo;
                let minus = eval(&work)?;
                work[i].data_mut()[c] = orig;
                let numeric = (plus - minus) / (hi - lo);
                let a = analytic[i].data()[c];
                let err = relative_error(a, numeric);
                report.coords_checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some(Mismatch {
                        input: i,
                        coord: c,
                        analytic: a,
                        numeric,
                    });
                }
            }
        }
        Ok(report)
    }
}

/// Worst relative error of `f`'s gradients with default settings.
pub fn grad_check<F, E>(f: F, inputs: &[Array]) -> Result<f64, E>
where
    F: Fn(&Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    GradCheck::default().run(f, inputs).map(|r| r.max_rel_error)
}
