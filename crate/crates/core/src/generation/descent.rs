use super::objective::ObjectiveTerms;
use crate::error::{Error, Result};

/// Result of [`descend_candidate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Descent {
    pub x: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<ObjectiveTerms>,
    pub steps: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Gradient descent with step halving.
///
/// A step that would raise the objective (or make it non-finite) is retried
/// at half the step size; the search for a step gives up once it falls below
/// `1e-12 · lr`. Stops when the gradient max-norm is at most `grad_threshold`
/// or after `max_steps` accepted steps.
pub fn descend_candidate<F>(
    x0: &[f64],
    mut objective: F,
    lr: f64,
    grad_threshold: f64,
    max_steps: usize,
) -> Result<Descent>
where
    F: FnMut(&[f64]) -> (ObjectiveTerms, Vec<f64>),
{
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial candidate".into()));
    }
    let mut x = x0.to_vec();
    let (mut terms, mut grad) = objective(&x);
    if !terms.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("objective at initial candidate".into()));
    }
    let mut trace = vec![terms];
    let mut steps = 0;
    let mut trial = vec![0.0; x.len()];

    'outer: while steps < max_steps && inf_norm(&grad) > grad_threshold {
        let mut step = lr;
        loop {
            for ((t, xv), g) in trial.iter_mut().zip(&x).zip(&grad) {
                *t = xv - step * g;
            }
            let (next_terms, next_grad) = objective(&trial);
            let finite = next_terms.total.is_finite() && next_grad.iter().all(|g| g.is_finite());
            if finite && next_terms.total <= terms.total {
                std::mem::swap(&mut x, &mut trial);
                terms = next_terms;
                grad = next_grad;
                trace.push(terms);
                steps += 1;
                break;
            }
            step *= 0.5;
            if step < lr * 1e-12 {
                break 'outer;
            }
        }
    }
    Ok(Descent { x, trace, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(center: Vec<f64>) -> impl Fn(&[f64]) -> (ObjectiveTerms, Vec<f64>) {
        move |x: &[f64]| {
            let v: f64 = x.iter().zip(&center).map(|(a, c)| (a - c).powi(2)).sum();
            let g = x.iter().zip(&center).map(|(a, c)| 2.0 * (a - c)).collect();
            (ObjectiveTerms { w1: v, w2: 0.0, total: v }, g)
        }
    }

    #[test]
    fn stationary_start_takes_no_steps() {
        let d = descend_candidate(&[1.0, 2.0], quadratic(vec![1.0, 2.0]), 0.1, 1e-6, 100).unwrap();
        assert_eq!(d.steps, 0);
        assert_eq!(d.x, vec![1.0, 2.0]);
        assert_eq!(d.trace.len(), 1);
    }

    #[test]
    fn quadratic_converges_to_minimizer() {
        let d = descend_candidate(&[5.0, -3.0, 0.0], quadratic(vec![1.0, 2.0, -1.0]), 0.1, 1e-8, 10_000)
            .unwrap();
        for (a, c) in d.x.iter().zip([1.0, 2.0, -1.0]) {
            assert!((a - c).abs() < 1e-8);
        }
        assert!(d.trace.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn oversized_step_backtracks_and_trace_is_nonincreasing() {
        // lr = 10 overshoots a quadratic with curvature 2 by far
        let d = descend_candidate(&[3.0], quadratic(vec![0.0]), 10.0, 1e-9, 200).unwrap();
        assert!(d.x[0].abs() < 1e-6);
        assert!(d.trace.windows(2).all(|w| w[1].total <= w[0].total));
    }

    #[test]
    fn max_steps_bounds_the_loop() {
        let d = descend_candidate(&[100.0], quadratic(vec![0.0]), 1e-4, 0.0, 7).unwrap();
        assert_eq!(d.steps, 7);
        assert_eq!(d.trace.len(), 8);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let f = |_: &[f64]| {
            (
                ObjectiveTerms { w1: f64::NAN, w2: 0.0, total: f64::NAN },
                vec![0.0],
            )
        };
        assert!(matches!(descend_candidate(&[0.0], f, 0.1, 1e-3, 5), Err(Error::NonFinite(_))));
    }
}
