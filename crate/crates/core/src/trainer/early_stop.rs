use std::fmt;

use crate::error::{Error, Result};

/// Per-unit stop epochs from the exponential schedule
///
/// `t_k = round((t_max - t_min) (e^{lambda (K - k)} - 1) / (e^{lambda (K - 1)} - 1) + t_min)`
///
/// for `k = 1..=K`, rounding half away from zero. Entry `k - 1` is unit `k`.
pub fn schedule_stop_epochs(t_min: usize, t_max: usize, lambda: f64, k: usize) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("k", "the stop schedule needs k >= 2"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::config("lambda", "must be positive"));
    }
    if t_min > t_max {
        return Err(Error::config(
            "t_min/t_max",
            format!("t_min ({t_min}) exceeds t_max ({t_max})"),
        ));
    }
    let span = (t_max - t_min) as f64;
    let denom = (lambda * (k - 1) as f64).exp() - 1.0;
    Ok((1..=k)
        .map(|unit| {
            let ratio = ((lambda * (k - unit) as f64).exp() - 1.0) / denom;
            (span * ratio + t_min as f64).round() as usize
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitStatus {
    pub active: bool,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub stop_epoch: Option<usize>,
}

/// Liveness of every unrolled unit. Units only ever go from active to
/// inactive.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    units: Vec<UnitStatus>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trigger {
    Formula,
    Validation,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trigger::Formula => "formula",
            Trigger::Validation => "validation",
        })
    }
}

/// A unit deactivation. `unit` is 1-based; accuracies are fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopEvent {
    pub epoch: usize,
    pub unit: usize,
    pub trigger: Trigger,
    pub best: f64,
    pub current: f64,
}

impl fmt::Display for StopEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} unit={} trigger={} best={:.6} current={:.6}",
            self.epoch, self.unit, self.trigger, self.best, self.current
        )
    }
}

impl EarlyStopState {
    pub fn new(k: usize) -> Self {
        EarlyStopState {
            units: vec![
                UnitStatus {
                    active: true,
                    best_val_acc: f64::NEG_INFINITY,
                    best_epoch: 0,
                    stop_epoch: None,
                };
                k
            ],
        }
    }

    pub fn units(&self) -> &[UnitStatus] {
        &self.units
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.units.iter().map(|u| u.active).collect()
    }

    /// Number of units to unroll: the 1-based index of the last active unit.
    pub fn unroll_depth(&self) -> usize {
        self.units.iter().rposition(|u| u.active).map_or(0, |i| i + 1)
    }

    /// Tracks the best accuracy of every active unit.
    fn observe(&mut self, val_acc: &[f64], epoch: usize) {
        for (u, &acc) in self.units.iter_mut().zip(val_acc) {
            if u.active && acc > u.best_val_acc {
                u.best_val_acc = acc;
                u.best_epoch = epoch;
            }
        }
    }

    fn deactivate(&mut self, idx: usize, epoch: usize) {
        let u = &mut self.units[idx];
        u.active = false;
        u.stop_epoch = Some(epoch);
    }

    /// Deactivates every unit (other than the first) whose scheduled stop
    /// epoch has been reached.
    pub fn apply_schedule(&mut self, stops: &[usize], val_acc: &[f64], epoch: usize) -> Vec<StopEvent> {
        self.observe(val_acc, epoch);
        let mut events = Vec::new();
        for idx in 1..self.units.len() {
            if self.units[idx].active && epoch >= stops[idx] {
                self.deactivate(idx, epoch);
                events.push(StopEvent {
                    epoch,
                    unit: idx + 1,
                    trigger: Trigger::Formula,
                    best: self.units[idx].best_val_acc,
                    current: val_acc[idx],
                });
            }
        }
        events
    }
}

/// Validation-drop rule: for each active unit the best accuracy is updated,
/// and a unit whose accuracy sits more than `delta` below its best is
/// deactivated at `epoch`. The first unit is never deactivated. `delta` is in
/// the same units as the accuracies.
pub fn update_validation_early_stop(
    state: &mut EarlyStopState,
    val_acc: &[f64],
    epoch: usize,
    delta: f64,
) -> Result<Vec<StopEvent>> {
    if val_acc.len() != state.units.len() {
        return Err(Error::contract(format!(
            "expected {} unit accuracies, got {}",
            state.units.len(),
            val_acc.len()
        )));
    }
    state.observe(val_acc, epoch);
    let mut events = Vec::new();
    for idx in 1..state.units.len() {
        let u = state.units[idx];
        if u.active && u.best_val_acc - val_acc[idx] > delta {
            state.deactivate(idx, epoch);
            events.push(StopEvent {
                epoch,
                unit: idx + 1,
                trigger: Trigger::Validation,
                best: u.best_val_acc,
                current: val_acc[idx],
            });
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_example() {
        let s = schedule_stop_epochs(5, 20, 1.0, 8).unwrap();
        assert_eq!(s[0], 20);
        assert_eq!(s[7], 5);
        // 15 (e^4 - 1) / (e^7 - 1) + 5 = 5.73380
        let direct = 15.0 * (4f64.exp() - 1.0) / (7f64.exp() - 1.0) + 5.0;
        assert!((direct - 5.73380).abs() < 1e-5);
        assert_eq!(s[3], 6);
    }

    #[test]
    fn schedule_rejects_single_unit() {
        assert!(schedule_stop_epochs(5, 20, 1.0, 1).is_err());
        assert!(schedule_stop_epochs(5, 20, 0.0, 4).is_err());
    }

    #[test]
    fn schedule_collapses_when_range_is_empty() {
        let s = schedule_stop_epochs(7, 7, 0.5, 5).unwrap();
        assert!(s.iter().all(|&t| t == 7));
    }

    #[test]
    fn small_lambda_approaches_linear_spacing() {
        let (t_min, t_max, k) = (5usize, 20usize, 8usize);
        let s = schedule_stop_epochs(t_min, t_max, 1e-6, k).unwrap();
        for unit in 1..=k {
            let linear = (t_max - t_min) as f64 * (k - unit) as f64 / (k - 1) as f64 + t_min as f64;
            let diff = (s[unit - 1] as f64 - linear.round()).abs();
            assert!(diff <= 1.0, "unit {unit}: {} vs {linear}", s[unit - 1]);
        }
    }

    #[test]
    fn nondecreasing_accuracies_keep_units() {
        let mut st = EarlyStopState::new(3);
        for (e, acc) in [[0.1, 0.2, 0.3], [0.2, 0.2, 0.4], [0.3, 0.5, 0.4]].iter().enumerate() {
            assert!(update_validation_early_stop(&mut st, acc, e + 1, 0.005).unwrap().is_empty());
        }
        assert_eq!(st.active_mask(), vec![true; 3]);
    }

    #[test]
    fn drop_past_threshold_deactivates() {
        let delta = 0.05;
        let mut st = EarlyStopState::new(3);
        update_validation_early_stop(&mut st, &[0.5, 0.5, 0.80], 1, delta).unwrap();
        let ev = update_validation_early_stop(&mut st, &[0.5, 0.5, 0.80 - delta - 0.01], 2, delta).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].unit, 3);
        assert_eq!(st.units()[2].stop_epoch, Some(2));
        assert_eq!(st.unroll_depth(), 2);
    }

    #[test]
    fn hand_stepped_sequence() {
        let mut st = EarlyStopState::new(2);
        for (e, a) in [0.5, 0.7, 0.66].iter().enumerate() {
            update_validation_early_stop(&mut st, &[0.9, *a], e + 1, 0.05).unwrap();
        }
        assert!(st.units()[1].active);
        update_validation_early_stop(&mut st, &[0.9, 0.64], 4, 0.05).unwrap();
        assert!(!st.units()[1].active);
        assert_eq!(st.units()[1].best_epoch, 2);
    }

    #[test]
    fn first_unit_is_exempt_and_inactive_units_stay_inactive() {
        let mut st = EarlyStopState::new(2);
        update_validation_early_stop(&mut st, &[0.9, 0.9], 1, 0.01).unwrap();
        update_validation_early_stop(&mut st, &[0.1, 0.1], 2, 0.01).unwrap();
        assert_eq!(st.active_mask(), vec![true, false]);
        update_validation_early_stop(&mut st, &[0.95, 0.99], 3, 0.01).unwrap();
        assert_eq!(st.active_mask(), vec![true, false]);
        assert_eq!(st.units()[1].stop_epoch, Some(2));
    }

    #[test]
    fn schedule_application_matches_stop_epochs() {
        let stops = schedule_stop_epochs(2, 6, 1.0, 4).unwrap();
        let mut st = EarlyStopState::new(4);
        let mut seen = [None; 4];
        for epoch in 1..=6 {
            for ev in st.apply_schedule(&stops, &[0.5; 4], epoch) {
                seen[ev.unit - 1] = Some(ev.epoch);
            }
        }
        assert_eq!(seen[0], None);
        for unit in 2..=4 {
            assert_eq!(seen[unit - 1], Some(stops[unit - 1]));
        }
    }
}
