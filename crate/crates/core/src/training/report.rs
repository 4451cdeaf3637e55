use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::networks::Stage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Early,
    MaxSteps,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub check: usize,
    pub step: usize,
    pub loss: f64,
}

/// Loss history of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    /// Training loss after each optimizer step, in step order.
    pub train_losses: Vec<f64>,
    /// Check 0 is taken before the first step.
    pub checks: Vec<ValidationCheck>,
    /// Index into `checks` of the retained weights.
    pub best_check: usize,
    pub stop_reason: StopReason,
    pub seconds: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record<'a> {
    Step { stage: Stage, step: usize, loss: f64 },
    Check { stage: Stage, check: usize, step: usize, loss: f64 },
    Summary { stage: Stage, best_check: usize, best_step: usize, best_loss: f64, initial_loss: f64, stop_reason: &'a StopReason, steps: usize, seconds: f64 },
}

impl StageReport {
    pub fn initial_val_loss(&self) -> f64 {
        self.checks.first().map_or(f64::NAN, |c| c.loss)
    }

    pub fn best(&self) -> &ValidationCheck {
        &self.checks[self.best_check]
    }

    pub fn steps(&self) -> usize {
        self.train_losses.len()
    }

    /// One JSON object per line: every step, every check, then a summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: Record| {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        };
        for (i, &loss) in self.train_losses.iter().enumerate() {
            push(Record::Step { stage: self.stage, step: i + 1, loss });
        }
        for c in &self.checks {
            push(Record::Check { stage: self.stage, check: c.check, step: c.step, loss: c.loss });
        }
        let best = self.best();
        push(Record::Summary {
            stage: self.stage,
            best_check: self.best_check,
            best_step: best.step,
            best_loss: best.loss,
            initial_loss: self.initial_val_loss(),
            stop_reason: &self.stop_reason,
            steps: self.steps(),
            seconds: self.seconds,
        });
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), TrainingError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }
}

/// Early-stopping bookkeeping: a check improves when its loss is strictly
/// below every earlier one.
#[derive(Clone, Debug, Default)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, since_best: 0 }
    }

    /// Records check `index`; returns true when it is the new best.
    pub fn record(&mut self, index: usize, loss: f64) -> bool {
        match self.best {
            Some((_, b)) if !(loss < b) => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((index, loss));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best_index(&self) -> usize {
        self.best.map_or(0, |(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_patience_checks_after_last_improvement() {
        let losses = [5.0, 4.0, 3.0, 3.5, 3.0, 4.0, 9.0, 1.0];
        let mut es = EarlyStopping::new(3);
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            es.record(i, l);
            if es.should_stop() {
                stopped = Some(i);
                break;
            }
        }
        // last improvement at check 2, so the stop comes at check 5
        assert_eq!(stopped, Some(5));
        assert_eq!(es.best_index(), 2);
    }

    #[test]
    fn nan_never_improves() {
        let mut es = EarlyStopping::new(1);
        assert!(es.record(0, 1.0));
        assert!(!es.record(1, f64::NAN));
        assert!(es.should_stop());
    }

    #[test]
    fn jsonl_has_one_line_per_record() {
        let r = StageReport {
            stage: Stage::Teacher,
            train_losses: vec![3.0, 2.0],
            checks: vec![ValidationCheck { check: 0, step: 0, loss: 4.0 }, ValidationCheck { check: 1, step: 2, loss: 1.5 }],
            best_check: 1,
            stop_reason: StopReason::MaxSteps,
            seconds: 0.5,
        };
        let text = r.to_jsonl();
        assert_eq!(text.lines().count(), 5);
        let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(last["kind"], "summary");
        assert_eq!(last["best_loss"], 1.5);
        assert_eq!(last["stop_reason"], "max_steps");
    }
}
