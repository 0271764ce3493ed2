use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which iterate a solver returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Averaging {
    /// `ᾱ_t = r α_t + (1 − r) ᾱ_{t−1}`; `r = None` means `min(1, 100/T)`.
    Geometric {
        #[serde(default)]
        r: Option<f64>,
    },
    /// The raw iterate until step `start`, then the running mean of
    /// `α_start, …, α_t`.
    ArithmeticTail { start: usize },
    /// The raw iterate.
    Last,
}

impl Default for Averaging {
    fn default() -> Self {
        Averaging::Geometric { r: None }
    }
}

impl Averaging {
    /// The geometric weight for a run of `steps` iterations, if geometric.
    pub fn resolved_r(&self, steps: usize) -> Option<f64> {
        match *self {
            Averaging::Geometric { r: Some(r) } => Some(r),
            Averaging::Geometric { r: None } => Some((100.0 / steps.max(1) as f64).min(1.0)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Averaging::Geometric { r: Some(r) } = *self {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(format!("averaging weight r must lie in (0, 1], got {r}")));
            }
        }
        Ok(())
    }
}

/// One averaging step at iteration `t` (1-based) given the previous average.
/// For the arithmetic tail, `t` decides whether averaging has started.
pub fn averaging_update(mode: Averaging, steps: usize, t: usize, prev: &mut DVector<f64>, alpha: &DVector<f64>) {
    match mode {
        Averaging::Geometric { .. } => {
            let r = mode.resolved_r(steps).unwrap_or(1.0);
            prev.zip_apply(alpha, |a, x| *a = r * x + (1.0 - r) * *a);
        }
        Averaging::ArithmeticTail { start } => {
            if t <= start.max(1) {
                prev.copy_from(alpha);
            } else {
                let count = (t - start.max(1) + 1) as f64;
                prev.zip_apply(alpha, |a, x| *a += (x - *a) / count);
            }
        }
        Averaging::Last => prev.copy_from(alpha),
    }
}

/// Running average owned by a solver.
#[derive(Debug, Clone)]
pub struct Averager {
    mode: Averaging,
    steps: usize,
    average: DVector<f64>,
}

impl Averager {
    pub fn new(mode: Averaging, steps: usize, n: usize) -> Result<Self> {
        mode.validate()?;
        Ok(Averager {
            mode,
            steps,
            average: DVector::zeros(n),
        })
    }

    pub fn update(&mut self, t: usize, alpha: &DVector<f64>) {
        averaging_update(self.mode, self.steps, t, &mut self.average, alpha);
    }

    pub fn average(&self) -> &DVector<f64> {
        &self.average
    }

    pub fn into_average(self) -> DVector<f64> {
        self.average
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weight_is_last_iterate() {
        let mut avg = Averager::new(Averaging::Geometric { r: Some(1.0) }, 10, 3).unwrap();
        let a = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        avg.update(1, &a);
        assert_eq!(avg.average(), &a);
    }

    #[test]
    fn constant_iterates_are_fixed_points() {
        let c = DVector::from_vec(vec![0.3, -1.7, 2.0]);
        for mode in [
            Averaging::Geometric { r: Some(0.01) },
            Averaging::ArithmeticTail { start: 3 },
            Averaging::Last,
        ] {
            let mut prev = c.clone();
            for t in 1..50 {
                averaging_update(mode, 50, t, &mut prev, &c);
            }
            assert!((&prev - &c).amax() <= 1e-15 * c.amax(), "{mode:?}");
        }
    }

    #[test]
    fn arithmetic_tail_is_mean_of_tail() {
        let mut avg = Averager::new(Averaging::ArithmeticTail { start: 3 }, 6, 1).unwrap();
        for t in 1..=6 {
            avg.update(t, &DVector::from_element(1, t as f64));
            if t < 3 {
                assert_eq!(avg.average()[0], t as f64);
            }
        }
        assert!((avg.average()[0] - (3.0 + 4.0 + 5.0 + 6.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn geometric_default_weight() {
        assert_eq!(Averaging::default().resolved_r(1000), Some(0.1));
        assert_eq!(Averaging::default().resolved_r(10), Some(1.0));
        assert!(Averaging::Geometric { r: Some(0.0) }.validate().is_err());
        assert!(Averaging::Geometric { r: Some(1.5) }.validate().is_err());
    }

    #[test]
    fn serde_shape() {
        let a: Averaging = serde_json::from_str(r#"{"mode":"arithmetic_tail","start":70000}"#).unwrap();
        assert_eq!(a, Averaging::ArithmeticTail { start: 70_000 });
        let g: Averaging = serde_json::from_str(r#"{"mode":"geometric"}"#).unwrap();
        assert_eq!(g, Averaging::Geometric { r: None });
    }
}
