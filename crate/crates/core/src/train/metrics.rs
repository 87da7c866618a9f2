use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BeliefState, NONE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub joint_accuracy: f64,
    pub slot_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_slot: BTreeMap<String, SlotMetrics>,
    pub turns: usize,
}

/// Raw counts behind the precision/recall figures. Merging is plain
/// addition, so counts from disjoint corpora combine in any order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub turns: usize,
    pub correct: usize,
    pub true_pos: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    fn precision(&self) -> f64 {
        ratio(self.true_pos, self.predicted, self.gold == 0)
    }

    fn recall(&self) -> f64 {
        ratio(self.true_pos, self.gold, self.predicted == 0)
    }
}

/// `num / den`; an empty denominator scores 1 only if the other side is
/// empty too.
fn ratio(num: usize, den: usize, other_empty: bool) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if other_empty {
        1.0
    } else {
        0.0
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Joint and slot accuracy plus micro P/R/F1 over value-bearing
/// assignments. `gold` and `pred` are aligned turn by turn; `slots` lists
/// every ontology slot so that "none" agreements count towards slot
/// accuracy.
pub fn compute_metrics(slots: &[String], gold: &[BeliefState], pred: &[BeliefState]) -> MetricsReport {
    assert_eq!(gold.len(), pred.len(), "gold and predicted turns must align");
    let mut per_slot: BTreeMap<&str, Counts> = slots.iter().map(|s| (s.as_str(), Counts::default())).collect();
    let mut joint = 0;
    for (g, p) in gold.iter().zip(pred) {
        let mut all = true;
        for slot in slots {
            let c = per_slot.get_mut(slot.as_str()).expect("known slot");
            let (gv, pv) = (g.get(slot), p.get(slot));
            c.turns += 1;
            if gv == pv {
                c.correct += 1;
            } else {
                all = false;
            }
            if gv != NONE {
                c.gold += 1;
            }
            if pv != NONE {
                c.predicted += 1;
                if pv == gv {
                    c.true_pos += 1;
                }
            }
        }
        joint += usize::from(all);
    }
    let mut total = Counts::default();
    for c in per_slot.values() {
        total.turns += c.turns;
        total.correct += c.correct;
        total.true_pos += c.true_pos;
        total.predicted += c.predicted;
        total.gold += c.gold;
    }
    let (precision, recall) = (total.precision(), total.recall());
    let turns = gold.len();
    MetricsReport {
        joint_accuracy: if turns == 0 { 0.0 } else { joint as f64 / turns as f64 },
        slot_accuracy: if total.turns == 0 {
            0.0
        } else {
            total.correct as f64 / total.turns as f64
        },
        precision,
        recall,
        f1: f1(precision, recall),
        per_slot: per_slot
            .into_iter()
            .map(|(s, c)| {
                let (p, r) = (c.precision(), c.recall());
                let accuracy = if c.turns == 0 {
                    0.0
                } else {
                    c.correct as f64 / c.turns as f64
                };
                (
                    s.to_string(),
                    SlotMetrics {
                        accuracy,
                        precision: p,
                        recall: r,
                        f1: f1(p, r),
                    },
                )
            })
            .collect(),
        turns,
    }
}
