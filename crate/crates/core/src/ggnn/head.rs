use serde::{Deserialize, Serialize};

use crate::labels::{Relationship, NUM_RELATIONSHIPS};
use crate::numeric::ops::{add_assign, matvec_acc, matvec_t_acc, outer_acc, softmax_slice};
use crate::numeric::{rng::Rng, ParamId, ParamStore};
use crate::Result;

/// Probabilities over the seven relationship categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationshipDistribution {
    pub probs: [f64; NUM_RELATIONSHIPS],
}

impl RelationshipDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let p = softmax_slice(logits);
        let mut probs = [0.0; NUM_RELATIONSHIPS];
        probs.copy_from_slice(&p);
        RelationshipDistribution { probs }
    }

    /// Most probable relationship; ties go to the lower index.
    pub fn argmax(&self) -> Relationship {
        let mut best = 0;
        for i in 1..NUM_RELATIONSHIPS {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        Relationship::from_index(best).expect("seven classes")
    }

    pub fn prob(&self, r: Relationship) -> f64 {
        self.probs[r.index()]
    }
}

/// Two fully connected layers with a ReLU between them, shared by all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHead {
    hidden: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Intermediate values of one head evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadPass {
    pub hidden_pre: Vec<f64>,
    pub logits: Vec<f64>,
}

impl RelationHead {
    pub fn new(store: &mut ParamStore, prefix: &str, hidden: usize, rng: &mut Rng) -> Result<Self> {
        Ok(RelationHead {
            hidden,
            w1: store.add_glorot(format!("{prefix}.W_s1"), hidden, hidden, rng)?,
            b1: store.add_zeros(format!("{prefix}.b_s1"), &[hidden])?,
            w2: store.add_glorot(format!("{prefix}.W_s2"), NUM_RELATIONSHIPS, hidden, rng)?,
            b2: store.add_zeros(format!("{prefix}.b_s2"), &[NUM_RELATIONSHIPS])?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }

    pub fn output_bias(&self) -> ParamId {
        self.b2
    }

    pub fn forward(&self, store: &ParamStore, h_o: &[f64]) -> HeadPass {
        let h = self.hidden;
        let mut hidden_pre = store.values(self.b1).to_vec();
        matvec_acc(store.values(self.w1), h, h, h_o, &mut hidden_pre);
        let act: Vec<f64> = hidden_pre.iter().map(|v| v.max(0.0)).collect();
        let mut logits = store.values(self.b2).to_vec();
        matvec_acc(store.values(self.w2), NUM_RELATIONSHIPS, h, &act, &mut logits);
        HeadPass { hidden_pre, logits }
    }

    pub fn distribution(&self, store: &ParamStore, h_o: &[f64]) -> RelationshipDistribution {
        RelationshipDistribution::from_logits(&self.forward(store, h_o).logits)
    }

    /// Accumulates parameter gradients for `d_logits` and returns `∂L/∂h^o`.
    pub fn backward(&self, store: &mut ParamStore, h_o: &[f64], pass: &HeadPass, d_logits: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let act: Vec<f64> = pass.hidden_pre.iter().map(|v| v.max(0.0)).collect();
        let mut d_act = vec![0.0; h];
        {
            let (w, dw) = store.value_and_grad(self.w2);
            outer_acc(dw, d_logits, &act);
            matvec_t_acc(w, NUM_RELATIONSHIPS, h, d_logits, &mut d_act);
        }
        add_assign(store.grad_mut(self.b2), d_logits);
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(&pass.hidden_pre)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        let mut d_h_o = vec![0.0; h];
        {
            let (w, dw) = store.value_and_grad(self.w1);
            outer_acc(dw, &d_pre, h_o);
            matvec_t_acc(w, h, h, &d_pre, &mut d_h_o);
        }
        add_assign(store.grad_mut(self.b1), &d_pre);
        d_h_o
    }
}
