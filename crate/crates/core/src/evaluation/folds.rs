//! Five-fold active-time partitioning and the train/characterize/test
//! rotation schedule.

use crate::events::{ActiveTimeline, Modality, TimedEvent};

use super::EvalError;

pub const NUM_FOLDS: usize = 5;

/// One experiment of the rotation: three training folds, one
/// characterization fold, one test fold (0-based fold indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Experiment {
    pub train: [usize; 3],
    pub characterize: usize,
    pub test: usize,
}

/// The five experiments, in order: training folds advance cyclically; each
/// fold serves exactly once as characterization and once as test.
pub const ROTATION: [Experiment; 5] = [
    Experiment { train: [0, 1, 2], characterize: 3, test: 4 },
    Experiment { train: [1, 2, 3], characterize: 4, test: 0 },
    Experiment { train: [2, 3, 4], characterize: 0, test: 1 },
    Experiment { train: [3, 4, 0], characterize: 1, test: 2 },
    Experiment { train: [4, 0, 1], characterize: 2, test: 3 },
];

/// Five contiguous, equal-duration active-time spans partitioning a user's
/// timeline. Spans are half-open except the last, which closes at the total
/// duration so the final event belongs to fold 4.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    boundaries: [i64; 6],
}

/// Fold boundaries at 20/40/60/80% of the total active duration.
pub fn plan_folds(timeline: &ActiveTimeline) -> Result<FoldPlan, EvalError> {
    let duration = timeline.total_active_duration();
    if timeline.entries().len() < NUM_FOLDS || duration <= 0 {
        return Err(EvalError::InsufficientActivity {
            events: timeline.entries().len(),
            active_secs: duration,
        });
    }
    let mut boundaries = [0i64; 6];
    for (k, b) in boundaries.iter_mut().enumerate() {
        *b = (k as i64 * duration) / NUM_FOLDS as i64;
    }
    boundaries[NUM_FOLDS] = duration;
    Ok(FoldPlan { boundaries })
}

impl FoldPlan {
    /// Half-open span `[lo, hi)` of a fold; the last fold is closed at `hi`.
    pub fn span(&self, fold: usize) -> (i64, i64) {
        (self.boundaries[fold], self.boundaries[fold + 1])
    }

    /// The unique fold containing an active-time instant.
    pub fn fold_of(&self, active_time: i64) -> usize {
        debug_assert!(active_time >= 0 && active_time <= self.boundaries[NUM_FOLDS]);
        let mut fold = 0;
        for k in 1..NUM_FOLDS {
            if active_time >= self.boundaries[k] {
                fold = k;
            }
        }
        fold
    }
}

/// A view of one fold of one user's timeline.
#[derive(Debug, Clone, Copy)]
pub struct FoldSlice<'a> {
    timeline: &'a ActiveTimeline,
    plan: &'a FoldPlan,
    fold: usize,
}

impl<'a> FoldSlice<'a> {
    pub fn new(timeline: &'a ActiveTimeline, plan: &'a FoldPlan, fold: usize) -> FoldSlice<'a> {
        FoldSlice { timeline, plan, fold }
    }

    pub fn span(&self) -> (i64, i64) {
        self.plan.span(self.fold)
    }

    fn contains(&self, active_time: i64) -> bool {
        let (lo, hi) = self.span();
        if self.fold == NUM_FOLDS - 1 {
            active_time >= lo && active_time <= hi
        } else {
            active_time >= lo && active_time < hi
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &'a TimedEvent> + '_ {
        self.timeline
            .entries()
            .iter()
            .filter(move |e| self.contains(e.active_time))
    }

    /// Decision points at stride omega: lo + omega, lo + 2*omega, ... <= hi.
    pub fn decision_points(&self, omega: i64) -> impl Iterator<Item = i64> {
        let (lo, hi) = self.span();
        (1..).map(move |j| lo + j * omega).take_while(move |t| *t <= hi)
    }

    /// Events of this fold inside the decision window ending at `t_now`,
    /// optionally restricted to one modality. Events of neighboring folds
    /// are never included, whatever the window reach.
    pub fn window_events(
        &self,
        t_now: i64,
        omega: i64,
        modality: Option<Modality>,
    ) -> Vec<&'a TimedEvent> {
        self.events()
            .filter(|e| {
                e.active_time <= t_now
                    && t_now - e.active_time <= omega
                    && modality.map_or(true, |m| e.event.modality() == m)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{compress_idle, IdleConfig, Payload, RawEvent};

    fn timeline_spanning(active_secs: i64, step: i64) -> ActiveTimeline {
        let events: Vec<RawEvent> = (0..=active_secs / step)
            .map(|i| RawEvent {
                user_id: "u".into(),
                wall_time: i * step,
                payload: Payload::Text('x'),
            })
            .collect();
        compress_idle(events, IdleConfig { threshold_secs: step + 1, cap_secs: step + 1 }).unwrap()
    }

    #[test]
    fn boundaries_at_fifths_of_active_time() {
        // 100 hours of active time -> folds of exactly 20 hours.
        let timeline = timeline_spanning(360_000, 100);
        let plan = plan_folds(&timeline).unwrap();
        assert_eq!(plan.span(0), (0, 72_000));
        assert_eq!(plan.span(1), (72_000, 144_000));
        assert_eq!(plan.span(2), (144_000, 216_000));
        assert_eq!(plan.span(3), (216_000, 288_000));
        assert_eq!(plan.span(4), (288_000, 360_000));
    }

    #[test]
    fn rotation_matches_published_schedule() {
        // Second experiment: train on folds 2,3,4; characterize 5; test 1
        // (1-based labels).
        assert_eq!(
            ROTATION[1],
            Experiment { train: [1, 2, 3], characterize: 4, test: 0 }
        );
        assert_eq!(
            ROTATION[0],
            Experiment { train: [0, 1, 2], characterize: 3, test: 4 }
        );
    }

    #[test]
    fn each_fold_tests_and_characterizes_exactly_once() {
        let mut tested = [0usize; NUM_FOLDS];
        let mut characterized = [0usize; NUM_FOLDS];
        let mut trained = [0usize; NUM_FOLDS];
        for exp in ROTATION {
            tested[exp.test] += 1;
            characterized[exp.characterize] += 1;
            for f in exp.train {
                trained[f] += 1;
            }
            // Phases are disjoint within an experiment.
            assert!(!exp.train.contains(&exp.characterize));
            assert!(!exp.train.contains(&exp.test));
            assert_ne!(exp.characterize, exp.test);
        }
        assert_eq!(tested, [1; NUM_FOLDS]);
        assert_eq!(characterized, [1; NUM_FOLDS]);
        assert_eq!(trained, [3; NUM_FOLDS]);
    }

    #[test]
    fn too_few_events_is_insufficient_activity() {
        let events: Vec<RawEvent> = (0..4)
            .map(|i| RawEvent {
                user_id: "u".into(),
                wall_time: i * 100,
                payload: Payload::Text('x'),
            })
            .collect();
        let timeline = compress_idle(events, IdleConfig::default()).unwrap();
        assert!(matches!(
            plan_folds(&timeline),
            Err(EvalError::InsufficientActivity { .. })
        ));
    }

    #[test]
    fn every_event_lands_in_exactly_one_fold() {
        let timeline = timeline_spanning(997 * 7, 7);
        let plan = plan_folds(&timeline).unwrap();
        let mut counts = [0usize; NUM_FOLDS];
        for e in timeline.entries() {
            counts[plan.fold_of(e.active_time)] += 1;
        }
        let total: usize = counts.iter().sum();
        assert_eq!(total, timeline.entries().len());
        // Slice views agree with fold_of.
        for fold in 0..NUM_FOLDS {
            let slice = FoldSlice::new(&timeline, &plan, fold);
            assert_eq!(slice.events().count(), counts[fold]);
        }
    }

    #[test]
    fn decision_points_tile_the_fold() {
        let timeline = timeline_spanning(10_000, 10);
        let plan = plan_folds(&timeline).unwrap();
        let slice = FoldSlice::new(&timeline, &plan, 1);
        let (lo, hi) = slice.span();
        let points: Vec<i64> = slice.decision_points(300).collect();
        assert_eq!(points.len(), ((hi - lo) / 300) as usize);
        assert!(points.iter().all(|t| *t > lo && *t <= hi));
    }
}
