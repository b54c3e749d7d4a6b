use serde::{Deserialize, Serialize};

use super::TrajectoryRecord;

/// Threshold on the inward radial jump `r0_before − r0_after`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum RadiusJump {
    Absolute(f64),
    /// Fraction of `r0` at the record before the jump.
    Relative(f64),
}

impl RadiusJump {
    fn threshold(&self, r0_before: f64) -> f64 {
        match *self {
            RadiusJump::Absolute(v) => v,
            RadiusJump::Relative(f) => f * r0_before,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub error_jump_min: f64,
    pub r_jump_min: RadiusJump,
    /// A class counts as affected when its accuracy moves by more than this.
    pub class_change_min: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            error_jump_min: 0.05,
            r_jump_min: RadiusJump::Relative(0.05),
            class_change_min: 0.2,
        }
    }
}

/// A discontinuity between two consecutive trajectory records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub beta_before: f64,
    pub beta_after: f64,
    /// `error_train` after minus before.
    pub delta_error: f64,
    /// `r0` before minus after.
    pub delta_r0: f64,
    /// Classes whose accuracy changed by more than the class threshold.
    pub affected_classes: Vec<usize>,
    /// Index of the record before the jump in the trajectory it was detected on.
    #[serde(skip)]
    pub index_before: usize,
}

/// Emits a [`Transition`] between consecutive records whenever the training error
/// rises by more than `error_jump_min` and the model moves inward by more than the
/// radius threshold in the same step.
pub fn detect_transitions(
    records: &[TrajectoryRecord],
    config: &DetectorConfig,
) -> Vec<Transition> {
    records
        .windows(2)
        .enumerate()
        .filter_map(|(i, pair)| {
            let (a, b) = (&pair[0], &pair[1]);
            let delta_error = b.error_train - a.error_train;
            let delta_r0 = a.r0 - b.r0;
            if delta_error <= config.error_jump_min || delta_r0 <= config.r_jump_min.threshold(a.r0)
            {
                return None;
            }
            let affected_classes = a
                .accuracy
                .per_class
                .iter()
                .zip(&b.accuracy.per_class)
                .enumerate()
                .filter(|(_, (x, y))| (*y - *x).abs() > config.class_change_min)
                .map(|(c, _)| c)
                .collect();
            Some(Transition {
                beta_before: a.beta,
                beta_after: b.beta,
                delta_error,
                delta_r0,
                affected_classes,
                index_before: i,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mnist::PerClassAccuracy;
    use crate::store::CheckpointId;

    pub(crate) fn record(beta: f64, error: f64, r0: f64, acc: [f64; 10]) -> TrajectoryRecord {
        TrajectoryRecord {
            beta,
            error_train: error,
            error_test: error,
            loss: error + beta * r0 * r0,
            r0,
            r_ref: r0,
            accuracy: PerClassAccuracy {
                per_class: acc.to_vec(),
                overall: acc.iter().sum::<f64>() / 10.0,
                support: vec![100; 10],
            },
            epochs_used: 6,
            checkpoint_id: CheckpointId::parse(&format!("{:032x}", (beta * 1e9) as u128)).unwrap(),
            diverged: false,
            critical_beta: None,
        }
    }

    fn smooth(n: usize) -> Vec<TrajectoryRecord> {
        (0..n)
            .map(|k| {
                let t = k as f64 / n as f64;
                record(1e-3 * (1.0 + t), 0.1 + 0.02 * t, 40.0 - 0.5 * t, [0.95; 10])
            })
            .collect()
    }

    #[test]
    fn single_injected_step() {
        let mut recs = smooth(10);
        for (k, r) in recs.iter_mut().enumerate().skip(5) {
            r.error_train += 0.5;
            r.r0 -= 3.0;
            if k >= 5 {
                r.accuracy.per_class[7] = 0.1;
            }
        }
        let found = detect_transitions(&recs, &DetectorConfig::default());
        assert_eq!(found.len(), 1);
        let t = &found[0];
        assert_eq!(t.index_before, 4);
        assert_eq!(t.beta_before, recs[4].beta);
        assert!(t.delta_error > 0.5 && t.delta_r0 > 3.0);
        assert_eq!(t.affected_classes, vec![7]);
    }

    #[test]
    fn smooth_trajectory_has_no_transitions() {
        assert!(detect_transitions(&smooth(50), &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn both_thresholds_are_required() {
        let mut recs = smooth(4);
        recs[2].error_train += 1.0;
        recs[3].error_train += 1.0;
        assert!(detect_transitions(&recs, &DetectorConfig::default()).is_empty());
        let cfg = DetectorConfig {
            r_jump_min: RadiusJump::Absolute(-1.0),
            ..DetectorConfig::default()
        };
        assert_eq!(detect_transitions(&recs, &cfg).len(), 1);
    }
}
