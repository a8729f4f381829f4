//! Reference evaluation of the multi-task training loss with analytic gradients.
//!
//! The grasp term combines a smooth-L1 regression over positive anchors with a
//! two-way softmax classification over positives and mined hard negatives. The
//! relation term is a negative log-likelihood over ordered object pairs. The
//! object detection term is taken as an opaque scalar.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{AnchorAssignment, GraspDelta};
use crate::relation::RelationLabel;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Negatives mined per positive.
pub const NEGATIVE_RATIO: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("loss weights must be positive and finite")]
    InvalidWeights,
    #[error("object detection loss must be non-negative, got {0}")]
    NegativeObjectLoss(f64),
    #[error("{expected} ground-truth deltas expected for the positives, got {got}")]
    TargetCountMismatch { expected: usize, got: usize },
    #[error("anchor index {0} out of range")]
    AnchorOutOfRange(usize),
    #[error("no ground-truth relation for pair ({0}, {1})")]
    MissingLabel(u32, u32),
    #[error("relation probabilities for pair ({0}, {1}) are not a distribution")]
    InvalidProbabilities(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the grasp classification term inside the grasp loss.
    pub alpha: f64,
    /// Weight of the grasp loss in the total.
    pub lambda: f64,
    /// Weight of the relation loss in the total.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if [self.alpha, self.lambda, self.beta]
            .iter()
            .all(|w| w.is_finite() && *w > 0.0)
        {
            Ok(())
        } else {
            Err(LossError::InvalidWeights)
        }
    }
}

/// Raw output of the grasp head for one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GraspPrediction {
    pub delta: GraspDelta,
    /// `(graspable, ungraspable)` logits.
    pub logits: [f64; 2],
}

impl GraspPrediction {
    /// Softmax probability of the graspable class.
    pub fn graspable_prob(&self) -> f64 {
        log_softmax2(self.logits)[0].exp()
    }
}

/// Gradient of a loss with respect to one anchor's outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorGrad {
    pub delta: [f64; 5],
    pub logits: [f64; 2],
}

/// `(log p_graspable, log p_ungraspable)` computed stably.
pub fn log_softmax2(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Smooth-L1 with the transition at `|x| = 1`. Returns `(value, derivative)`.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspLoss {
    pub l_greg: f64,
    pub l_gcls: f64,
    /// `l_greg + alpha * l_gcls`.
    pub l_g: f64,
    /// Negatives chosen by hard mining, hardest first.
    pub mined_negatives: Vec<usize>,
    /// Gradient of `l_greg` (delta part) and `l_gcls` (logit part), one entry per anchor.
    /// The two terms depend on disjoint inputs; scale the logit part by `alpha` for `l_g`.
    pub grad: Vec<AnchorGrad>,
}

/// Picks the `3P` negatives with the highest graspable probability (at least 3
/// when there are no positives). Ties keep anchor order.
pub fn mine_negatives(preds: &[GraspPrediction], assign: &AnchorAssignment) -> Vec<usize> {
    let budget = NEGATIVE_RATIO * assign.num_positives().max(1);
    let mut ranked: Vec<(usize, f64)> = assign
        .negatives
        .iter()
        .map(|&i| (i, log_softmax2(preds[i].logits)[0]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(budget).map(|(i, _)| i).collect()
}

/// Grasp detection loss for one ROI. `gt_deltas[j]` is the encoded target of
/// `assign.positives[j]`.
pub fn grasp_loss(
    preds: &[GraspPrediction],
    assign: &AnchorAssignment,
    gt_deltas: &[GraspDelta],
    w: &LossWeights,
) -> Result<GraspLoss, LossError> {
    w.validate()?;
    if gt_deltas.len() != assign.positives.len() {
        return Err(LossError::TargetCountMismatch {
            expected: assign.positives.len(),
            got: gt_deltas.len(),
        });
    }
    if let Some(&bad) = assign
        .positives
        .iter()
        .map(|(i, _)| i)
        .chain(&assign.negatives)
        .find(|&&i| i >= preds.len())
    {
        return Err(LossError::AnchorOutOfRange(bad));
    }

    let mut grad = vec![AnchorGrad::default(); preds.len()];
    let mut l_greg = 0.0;
    let mut l_gcls = 0.0;

    for (&(ai, _), target) in assign.positives.iter().zip(gt_deltas) {
        let p = &preds[ai];
        let pred = p.delta.to_array();
        for (m, (&pv, tv)) in pred.iter().zip(target.to_array()).enumerate() {
            let (v, d) = smooth_l1(pv - tv);
            l_greg += v;
            grad[ai].delta[m] = d;
        }
        let ls = log_softmax2(p.logits);
        l_gcls -= ls[0];
        let cg = ls[0].exp();
        grad[ai].logits = [cg - 1.0, 1.0 - cg];
    }

    let mined = mine_negatives(preds, assign);
    for &ni in &mined {
        let ls = log_softmax2(preds[ni].logits);
        l_gcls -= ls[1];
        let cg = ls[0].exp();
        grad[ni].logits = [cg, -cg];
    }

    Ok(GraspLoss {
        l_greg,
        l_gcls,
        l_g: l_greg + w.alpha * l_gcls,
        mined_negatives: mined,
        grad,
    })
}

/// Predicted relation distribution for one ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    pub first: u32,
    pub second: u32,
    pub probs: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationLoss {
    pub value: f64,
    /// d value / d probs, aligned with the prediction list. Zero for clamped entries.
    pub grad: Vec<[f64; 3]>,
    /// Pairs whose true-class probability was clamped to [`PROB_FLOOR`].
    pub clamped: Vec<(u32, u32)>,
}

/// Negative log-likelihood of the true relation over all predicted pairs.
pub fn relation_loss(
    preds: &[RelationPrediction],
    gt: &HashMap<(u32, u32), RelationLabel>,
) -> Result<RelationLoss, LossError> {
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    let mut clamped = Vec::new();
    for p in preds {
        let label = gt
            .get(&(p.first, p.second))
            .ok_or(LossError::MissingLabel(p.first, p.second))?;
        let sum: f64 = p.probs.iter().sum();
        if p.probs.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::InvalidProbabilities(p.first, p.second));
        }
        let r = label.index();
        let pr = p.probs[r];
        let mut g = [0.0; 3];
        if pr < PROB_FLOOR {
            clamped.push((p.first, p.second));
            value -= PROB_FLOOR.ln();
        } else {
            value -= pr.ln();
            g[r] = -1.0 / pr;
        }
        grad.push(g);
    }
    Ok(RelationLoss {
        value,
        grad,
        clamped,
    })
}

/// `l_o + lambda * l_g + beta * l_r`.
pub fn total_loss(l_o: f64, l_g: f64, l_r: f64, w: &LossWeights) -> Result<f64, LossError> {
    w.validate()?;
    if !(l_o >= 0.0) {
        return Err(LossError::NegativeObjectLoss(l_o));
    }
    Ok(l_o + w.lambda * l_g + w.beta * l_r)
}

/// All loss terms of one training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_o: f64,
    pub l_greg: f64,
    pub l_gcls: f64,
    pub l_g: f64,
    pub l_r: f64,
    pub l_total: f64,
    pub grasp_grad: Vec<AnchorGrad>,
    pub relation_grad: Vec<[f64; 3]>,
}

impl LossReport {
    pub fn assemble(
        l_o: f64,
        grasp: GraspLoss,
        rel: RelationLoss,
        w: &LossWeights,
    ) -> Result<Self, LossError> {
        let l_total = total_loss(l_o, grasp.l_g, rel.value, w)?;
        Ok(Self {
            l_o,
            l_greg: grasp.l_greg,
            l_gcls: grasp.l_gcls,
            l_g: grasp.l_g,
            l_r: rel.value,
            l_total,
            grasp_grad: grasp.grad,
            relation_grad: rel.grad,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logit_for_prob(p: f64) -> [f64; 2] {
        [(p / (1.0 - p)).ln(), 0.0]
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), (0.0, 0.0));
        assert_eq!(smooth_l1(0.5), (0.125, 0.5));
        assert_eq!(smooth_l1(2.0), (1.5, 1.0));
        assert_eq!(smooth_l1(-2.0), (1.5, -1.0));
    }

    fn single_positive(n_anchors: usize) -> AnchorAssignment {
        AnchorAssignment {
            positives: vec![(0, 0)],
            negatives: (1..n_anchors).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn regression_zero_at_target() {
        let target = GraspDelta::new(0.1, -0.2, 0.3, 0.0, 0.5);
        let preds = vec![GraspPrediction {
            delta: target,
            logits: [0.0, 0.0],
        }];
        let out = grasp_loss(&preds, &single_positive(1), &[target], &LossWeights::default()).unwrap();
        assert_eq!(out.l_greg, 0.0);
        assert!(out.l_gcls > 0.0);
    }

    #[test]
    fn regression_half_residuals() {
        let preds = vec![GraspPrediction {
            delta: GraspDelta::new(0.5, 0.5, 0.5, 0.5, 0.5),
            logits: [0.0, 0.0],
        }];
        let out = grasp_loss(
            &preds,
            &single_positive(1),
            &[GraspDelta::default()],
            &LossWeights::default(),
        )
        .unwrap();
        assert!((out.l_greg - 0.625).abs() < 1e-12);
    }

    #[test]
    fn classification_with_three_mined_negatives() {
        let e1 = (-1.0f64).exp();
        let mut preds = vec![GraspPrediction {
            delta: GraspDelta::default(),
            logits: logit_for_prob(e1),
        }];
        // three negatives with c_ug = 1/e, plus easy ones that must not be mined
        for _ in 0..3 {
            preds.push(GraspPrediction {
                delta: GraspDelta::default(),
                logits: logit_for_prob(1.0 - e1),
            });
        }
        for _ in 0..5 {
            preds.push(GraspPrediction {
                delta: GraspDelta::default(),
                logits: [-5.0, 5.0],
            });
        }
        let out = grasp_loss(
            &preds,
            &single_positive(preds.len()),
            &[GraspDelta::default()],
            &LossWeights::default(),
        )
        .unwrap();
        assert!((out.l_gcls - 4.0).abs() < 1e-12, "{}", out.l_gcls);
        assert_eq!(out.mined_negatives, vec![1, 2, 3]);
        assert_eq!(out.grad[6].logits, [0.0, 0.0]);
    }

    #[test]
    fn no_positives_mines_three() {
        let preds: Vec<GraspPrediction> = (0..10)
            .map(|i| GraspPrediction {
                delta: GraspDelta::default(),
                logits: [i as f64 * 0.1, 0.0],
            })
            .collect();
        let assign = AnchorAssignment {
            negatives: (0..10).collect(),
            ..Default::default()
        };
        let out = grasp_loss(&preds, &assign, &[], &LossWeights::default()).unwrap();
        assert_eq!(out.l_greg, 0.0);
        assert_eq!(out.mined_negatives, vec![9, 8, 7]);

        let few = AnchorAssignment {
            negatives: vec![4, 5],
            ..Default::default()
        };
        let out = grasp_loss(&preds, &few, &[], &LossWeights::default()).unwrap();
        assert_eq!(out.mined_negatives.len(), 2);
    }

    #[test]
    fn grasp_loss_input_errors() {
        let preds = vec![GraspPrediction::default()];
        let assign = single_positive(1);
        assert!(matches!(
            grasp_loss(&preds, &assign, &[], &LossWeights::default()),
            Err(LossError::TargetCountMismatch { .. })
        ));
        let bad = AnchorAssignment {
            positives: vec![(3, 0)],
            ..Default::default()
        };
        assert!(matches!(
            grasp_loss(&preds, &bad, &[GraspDelta::default()], &LossWeights::default()),
            Err(LossError::AnchorOutOfRange(3))
        ));
    }

    fn labels(pairs: &[((u32, u32), RelationLabel)]) -> HashMap<(u32, u32), RelationLabel> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn relation_loss_examples() {
        let gt = labels(&[((0, 1), RelationLabel::Above), ((1, 0), RelationLabel::Below)]);
        let certain = [
            RelationPrediction {
                first: 0,
                second: 1,
                probs: [0.0, 1.0, 0.0],
            },
            RelationPrediction {
                first: 1,
                second: 0,
                probs: [0.0, 0.0, 1.0],
            },
        ];
        assert_eq!(relation_loss(&certain, &gt).unwrap().value, 0.0);

        let e1 = (-1.0f64).exp();
        let one = [RelationPrediction {
            first: 0,
            second: 1,
            probs: [(1.0 - e1) / 2.0, e1, (1.0 - e1) / 2.0],
        }];
        let l = relation_loss(&one, &gt).unwrap();
        assert!((l.value - 1.0).abs() < 1e-12);
        assert!((l.grad[0][1] + 1.0 / e1).abs() < 1e-9);

        let halves = [
            RelationPrediction {
                first: 0,
                second: 1,
                probs: [0.5, 0.5, 0.0],
            },
            RelationPrediction {
                first: 1,
                second: 0,
                probs: [0.25, 0.25, 0.5],
            },
        ];
        let l = relation_loss(&halves, &gt).unwrap();
        assert!((l.value - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn relation_loss_missing_and_clamped() {
        let gt = labels(&[((0, 1), RelationLabel::None)]);
        let p = [RelationPrediction {
            first: 1,
            second: 0,
            probs: [1.0, 0.0, 0.0],
        }];
        assert_eq!(relation_loss(&p, &gt), Err(LossError::MissingLabel(1, 0)));

        let p = [RelationPrediction {
            first: 0,
            second: 1,
            probs: [0.0, 1.0, 0.0],
        }];
        let l = relation_loss(&p, &gt).unwrap();
        assert_eq!(l.clamped, vec![(0, 1)]);
        assert!((l.value + PROB_FLOOR.ln()).abs() < 1e-9);

        let p = [RelationPrediction {
            first: 0,
            second: 1,
            probs: [0.5, 0.6, 0.0],
        }];
        assert!(relation_loss(&p, &gt).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let unit = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, &unit).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, &unit).unwrap(), 6.0);
        let w = LossWeights {
            alpha: 1.0,
            lambda: 0.5,
            beta: 2.0,
        };
        assert_eq!(total_loss(1.0, 2.0, 3.0, &w).unwrap(), 8.0);
        assert_eq!(
            total_loss(-1.0, 0.0, 0.0, &unit),
            Err(LossError::NegativeObjectLoss(-1.0))
        );
        let zero = LossWeights {
            beta: 0.0,
            ..unit
        };
        assert_eq!(total_loss(1.0, 1.0, 1.0, &zero), Err(LossError::InvalidWeights));
    }

    #[test]
    fn report_assembles_consistently() {
        let preds = vec![
            GraspPrediction {
                delta: GraspDelta::new(0.2, 0.0, 0.0, 0.0, 0.0),
                logits: [0.3, -0.1],
            },
            GraspPrediction {
                delta: GraspDelta::default(),
                logits: [1.0, 0.0],
            },
        ];
        let assign = single_positive(2);
        let w = LossWeights {
            alpha: 2.0,
            lambda: 0.5,
            beta: 3.0,
        };
        let g = grasp_loss(&preds, &assign, &[GraspDelta::default()], &w).unwrap();
        let gt = labels(&[((0, 1), RelationLabel::None)]);
        let r = relation_loss(
            &[RelationPrediction {
                first: 0,
                second: 1,
                probs: [0.5, 0.25, 0.25],
            }],
            &gt,
        )
        .unwrap();
        let rep = LossReport::assemble(0.7, g, r, &w).unwrap();
        assert!((rep.l_g - (rep.l_greg + 2.0 * rep.l_gcls)).abs() < 1e-12);
        assert!((rep.l_total - (0.7 + 0.5 * rep.l_g + 3.0 * rep.l_r)).abs() < 1e-12);
        assert!(rep.l_greg >= 0.0 && rep.l_gcls > 0.0 && rep.l_r >= 0.0);
    }
}
