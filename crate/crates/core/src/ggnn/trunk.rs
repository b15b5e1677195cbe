use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SceneGraph;
use crate::numeric::ops::{add_assign, matvec_acc, matvec_t_acc, outer_acc, sigmoid_scalar};
use crate::numeric::{rng::Rng, ParamId, ParamStore};

/// Sizes shared by every part of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GgnnDims {
    pub hidden: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub global_dim: usize,
    /// Length of the per-action embedding appended to the fusion input;
    /// 0 unless one trunk serves several actions.
    #[serde(default)]
    pub action_embed_dim: usize,
    #[serde(default)]
    pub num_actions: usize,
}

impl GgnnDims {
    pub fn new(hidden: usize, num_classes: usize, feature_dim: usize, global_dim: usize) -> Self {
        GgnnDims {
            hidden,
            num_classes,
            feature_dim,
            global_dim,
            action_embed_dim: 0,
            num_actions: 0,
        }
    }

    /// Width of the fusion input `[h^T, h^0, φ(I), action]`.
    pub fn fusion_width(&self) -> usize {
        2 * self.hidden + self.global_dim + self.action_embed_dim
    }
}

/// Which inputs are withheld from the model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputMask {
    /// Object class one-hot.
    #[serde(default)]
    pub drop_class: bool,
    /// Per-object feature vector.
    #[serde(default)]
    pub drop_feature: bool,
    /// Whole-image feature.
    #[serde(default)]
    pub drop_global: bool,
}

/// Inputs of one node: its object class and its appearance feature.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInput {
    pub class_id: usize,
    pub feature: Vec<f64>,
}

/// Everything the forward pass of [`Trunk::propagate`] keeps for BPTT.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationTrace {
    /// `relu(W_c ĉ)` per node (empty when the class is masked).
    class_act: Vec<Vec<f64>>,
    /// `W_f φ` before the ReLU (empty when the feature is masked).
    feat_pre: Vec<Vec<f64>>,
    /// `h^t` for t = 0..=T.
    states: Vec<Vec<Vec<f64>>>,
    steps: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq)]
struct StepTrace {
    neighbor_sum: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
    candidate: Vec<Vec<f64>>,
}

impl PropagationTrace {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.states[0].len()
    }

    /// Hidden states of all nodes after `t` steps.
    pub fn states(&self, t: usize) -> &[Vec<f64>] {
        &self.states[t]
    }

    pub fn initial(&self) -> &[Vec<f64>] {
        &self.states[0]
    }

    pub fn last(&self) -> &[Vec<f64>] {
        self.states.last().expect("trace holds h^0")
    }

    /// Aggregated message `x_v^t` (t ≥ 1).
    pub fn message(&self, t: usize, v: usize) -> &[f64] {
        &self.steps[t - 1].x[v]
    }

    pub fn update_gate(&self, t: usize, v: usize) -> &[f64] {
        &self.steps[t - 1].z[v]
    }

    pub fn reset_gate(&self, t: usize, v: usize) -> &[f64] {
        &self.steps[t - 1].r[v]
    }

    pub fn candidate(&self, t: usize, v: usize) -> &[f64] {
        &self.steps[t - 1].candidate[v]
    }
}

/// Output of one GRU step for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub h: Vec<f64>,
}

/// Fusion features `h^o` for every node plus the cache needed to backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub h_o: Vec<Vec<f64>>,
    /// Concatenated fusion inputs, one per node.
    pub inputs: Vec<Vec<f64>>,
}

/// Node initialization, gated propagation and output fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk {
    dims: GgnnDims,
    w_c: ParamId,
    w_f: ParamId,
    w_p: ParamId,
    b_p: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_h: ParamId,
    u_h: ParamId,
    b_h: ParamId,
    w_ho: ParamId,
    action_embedding: Option<ParamId>,
}

impl Trunk {
    pub fn new(store: &mut ParamStore, prefix: &str, dims: GgnnDims, rng: &mut Rng) -> Result<Self> {
        let h = dims.hidden;
        if h == 0 || dims.num_classes == 0 || dims.feature_dim == 0 {
            return Err(Error::Config(format!("degenerate model dimensions {dims:?}")));
        }
        let name = |s: &str| format!("{prefix}.{s}");
        let mut mat =
            |store: &mut ParamStore, s: &str, rows: usize, cols: usize| store.add_glorot(name(s), rows, cols, rng);
        let w_c = mat(store, "W_c", h, dims.num_classes)?;
        let w_f = mat(store, "W_f", h, dims.feature_dim)?;
        let w_p = mat(store, "W_p", h, h)?;
        let w_z = mat(store, "W_z", h, h)?;
        let u_z = mat(store, "U_z", h, h)?;
        let w_r = mat(store, "W_r", h, h)?;
        let u_r = mat(store, "U_r", h, h)?;
        let w_h = mat(store, "W_h", h, h)?;
        let u_h = mat(store, "U_h", h, h)?;
        let w_ho = mat(store, "W_ho", h, dims.fusion_width())?;
        let action_embedding = if dims.action_embed_dim > 0 {
            Some(mat(
                store,
                "action_embedding",
                dims.num_actions.max(1),
                dims.action_embed_dim,
            )?)
        } else {
            None
        };
        Ok(Trunk {
            dims,
            w_c,
            w_f,
            w_p,
            b_p: store.add_zeros(name("b_p"), &[h])?,
            w_z,
            u_z,
            b_z: store.add_zeros(name("b_z"), &[h])?,
            w_r,
            u_r,
            b_r: store.add_zeros(name("b_r"), &[h])?,
            w_h,
            u_h,
            b_h: store.add_zeros(name("b_h"), &[h])?,
            w_ho,
            action_embedding,
        })
    }

    pub fn dims(&self) -> &GgnnDims {
        &self.dims
    }

    /// Ids of the gate biases `b_z, b_r, b_h`, for tests that pin gates open
    /// or closed.
    pub fn gate_biases(&self) -> [ParamId; 3] {
        [self.b_z, self.b_r, self.b_h]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![
            self.w_c, self.w_f, self.w_p, self.b_p, self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r,
            self.w_h, self.u_h, self.b_h, self.w_ho,
        ];
        ids.extend(self.action_embedding);
        ids
    }

    fn check_input(&self, input: &NodeInput) -> Result<()> {
        if input.class_id >= self.dims.num_classes {
            return Err(Error::UnknownClass {
                class: input.class_id,
                num_classes: self.dims.num_classes,
            });
        }
        if input.feature.len() != self.dims.feature_dim {
            return Err(Error::dim(
                "init_node",
                format!(
                    "object feature has length {}, model expects {}",
                    input.feature.len(),
                    self.dims.feature_dim
                ),
            ));
        }
        Ok(())
    }

    /// `h^0 = relu(W_c ĉ) ⊙ relu(W_f φ)`. A masked input removes its factor
    /// from the product; with both masked `h^0 = 0`.
    pub fn init_node(&self, store: &ParamStore, input: &NodeInput, mask: InputMask) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let (class_act, feat_pre) = self.init_parts(store, input, mask);
        Ok(combine_init(&class_act, &feat_pre, self.dims.hidden))
    }

    fn init_parts(&self, store: &ParamStore, input: &NodeInput, mask: InputMask) -> (Vec<f64>, Vec<f64>) {
        let h = self.dims.hidden;
        let class_act = if mask.drop_class {
            Vec::new()
        } else {
            let w = store.values(self.w_c);
            let c = self.dims.num_classes;
            (0..h).map(|i| w[i * c + input.class_id].max(0.0)).collect()
        };
        let feat_pre = if mask.drop_feature {
            Vec::new()
        } else {
            let mut pre = vec![0.0; h];
            matvec_acc(
                store.values(self.w_f),
                h,
                self.dims.feature_dim,
                &input.feature,
                &mut pre,
            );
            pre
        };
        (class_act, feat_pre)
    }

    /// `x_v = Σ_{v'} W_p h_{v'} + b_p`, with the bias added once.
    pub fn aggregate(&self, store: &ParamStore, neighbor_states: &[&[f64]]) -> Vec<f64> {
        let sum = canonical_sum(neighbor_states, self.dims.hidden);
        self.message_from_sum(store, &sum)
    }

    fn message_from_sum(&self, store: &ParamStore, sum: &[f64]) -> Vec<f64> {
        let h = self.dims.hidden;
        let mut x = store.values(self.b_p).to_vec();
        matvec_acc(store.values(self.w_p), h, h, sum, &mut x);
        x
    }

    /// One gated update of a node's state given its aggregated message.
    pub fn gru_update(&self, store: &ParamStore, x: &[f64], h_prev: &[f64]) -> GruStep {
        let h = self.dims.hidden;
        let gate = |w: ParamId, u: ParamId, b: ParamId, state: &[f64]| {
            let mut a = store.values(b).to_vec();
            matvec_acc(store.values(w), h, h, x, &mut a);
            matvec_acc(store.values(u), h, h, state, &mut a);
            a
        };
        let z: Vec<f64> = gate(self.w_z, self.u_z, self.b_z, h_prev)
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let r: Vec<f64> = gate(self.w_r, self.u_r, self.b_r, h_prev)
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let candidate: Vec<f64> = gate(self.w_h, self.u_h, self.b_h, &gated)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let new_h = (0..h).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i]).collect();
        GruStep {
            z,
            r,
            candidate,
            h: new_h,
        }
    }

    /// Initializes every node and runs `steps` synchronous rounds of message
    /// passing over the graph's active edges.
    pub fn propagate(
        &self,
        store: &ParamStore,
        graph: &SceneGraph,
        inputs: &[NodeInput],
        mask: InputMask,
        steps: usize,
    ) -> Result<PropagationTrace> {
        if inputs.len() != graph.len() {
            return Err(Error::IncompleteScene(format!(
                "{} node inputs for {} nodes",
                inputs.len(),
                graph.len()
            )));
        }
        let mut class_act = Vec::with_capacity(inputs.len());
        let mut feat_pre = Vec::with_capacity(inputs.len());
        let mut h0 = Vec::with_capacity(inputs.len());
        for input in inputs {
            self.check_input(input)?;
            let (c, f) = self.init_parts(store, input, mask);
            h0.push(combine_init(&c, &f, self.dims.hidden));
            class_act.push(c);
            feat_pre.push(f);
        }
        let mut states = vec![h0];
        let mut traces = Vec::with_capacity(steps);
        for _ in 0..steps {
            let prev = states.last().expect("h^0 present");
            let mut step = StepTrace {
                neighbor_sum: Vec::with_capacity(prev.len()),
                x: Vec::with_capacity(prev.len()),
                z: Vec::with_capacity(prev.len()),
                r: Vec::with_capacity(prev.len()),
                candidate: Vec::with_capacity(prev.len()),
            };
            let mut next = Vec::with_capacity(prev.len());
            for v in 0..prev.len() {
                let neighbors: Vec<&[f64]> = graph.incoming(v).iter().map(|&u| prev[u].as_slice()).collect();
                let sum = canonical_sum(&neighbors, self.dims.hidden);
                let x = self.message_from_sum(store, &sum);
                let g = self.gru_update(store, &x, &prev[v]);
                step.neighbor_sum.push(sum);
                step.x.push(x);
                step.z.push(g.z);
                step.r.push(g.r);
                step.candidate.push(g.candidate);
                next.push(g.h);
            }
            states.push(next);
            traces.push(step);
        }
        Ok(PropagationTrace {
            class_act,
            feat_pre,
            states,
            steps: traces,
        })
    }

    /// `h^o = relu(W_ho [h^T, h^0, φ(I), e_a])` for every node.
    pub fn fuse(
        &self,
        store: &ParamStore,
        trace: &PropagationTrace,
        global: &[f64],
        mask: InputMask,
        action: Option<usize>,
    ) -> Result<FusionOutput> {
        if global.len() != self.dims.global_dim {
            return Err(Error::Config(format!(
                "global feature has length {}, model expects {}",
                global.len(),
                self.dims.global_dim
            )));
        }
        let embedding = match (self.action_embedding, action) {
            (Some(id), Some(a)) => {
                let e = self.dims.action_embed_dim;
                let table = store.values(id);
                if a >= self.dims.num_actions {
                    return Err(Error::Index {
                        what: "action embedding",
                        index: a,
                        size: self.dims.num_actions,
                    });
                }
                table[a * e..(a + 1) * e].to_vec()
            }
            (Some(_), None) => return Err(Error::Config("this trunk needs an action index".into())),
            (None, _) => Vec::new(),
        };
        let h = self.dims.hidden;
        let width = self.dims.fusion_width();
        let w = store.values(self.w_ho);
        let mut h_o = Vec::with_capacity(trace.num_nodes());
        let mut inputs = Vec::with_capacity(trace.num_nodes());
        for v in 0..trace.num_nodes() {
            let mut u = Vec::with_capacity(width);
            u.extend_from_slice(&trace.last()[v]);
            u.extend_from_slice(&trace.initial()[v]);
            if mask.drop_global {
                u.extend(std::iter::repeat_n(0.0, global.len()));
            } else {
                u.extend_from_slice(global);
            }
            u.extend_from_slice(&embedding);
            let mut pre = vec![0.0; h];
            matvec_acc(w, h, width, &u, &mut pre);
            pre.iter_mut().for_each(|p| *p = p.max(0.0));
            h_o.push(pre);
            inputs.push(u);
        }
        Ok(FusionOutput { h_o, inputs })
    }

    /// Backpropagates `d_h_o` (one vector per node, zeros allowed) through
    /// fusion, all propagation steps and node initialization, accumulating
    /// parameter gradients into `store`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        store: &mut ParamStore,
        graph: &SceneGraph,
        inputs: &[NodeInput],
        mask: InputMask,
        trace: &PropagationTrace,
        fusion: &FusionOutput,
        action: Option<usize>,
        d_h_o: &[Vec<f64>],
    ) {
        let h = self.dims.hidden;
        let n = trace.num_nodes();
        let width = self.dims.fusion_width();
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; h]; n];
        let mut dh0_direct: Vec<Vec<f64>> = vec![vec![0.0; h]; n];

        for v in 0..n {
            let dpre: Vec<f64> = d_h_o[v]
                .iter()
                .zip(&fusion.h_o[v])
                .map(|(&g, &out)| if out > 0.0 { g } else { 0.0 })
                .collect();
            if dpre.iter().all(|&g| g == 0.0) {
                continue;
            }
            let mut du = vec![0.0; width];
            {
                let (w, dw) = store.value_and_grad(self.w_ho);
                outer_acc(dw, &dpre, &fusion.inputs[v]);
                matvec_t_acc(w, h, width, &dpre, &mut du);
            }
            add_assign(&mut dh[v], &du[..h]);
            add_assign(&mut dh0_direct[v], &du[h..2 * h]);
            if let (Some(id), Some(a)) = (self.action_embedding, action) {
                let e = self.dims.action_embed_dim;
                add_assign(
                    &mut store.grad_mut(id)[a * e..(a + 1) * e],
                    &du[2 * h + self.dims.global_dim..],
                );
            }
        }

        for t in (1..=trace.num_steps()).rev() {
            let step = &trace.steps[t - 1];
            let prev = trace.states(t - 1);
            let mut dprev: Vec<Vec<f64>> = vec![vec![0.0; h]; n];
            for v in 0..n {
                let (dx, dh_self) = self.gru_backward(store, step, v, &prev[v], &dh[v]);
                add_assign(&mut dprev[v], &dh_self);
                if graph.incoming(v).is_empty() {
                    add_assign(store.grad_mut(self.b_p), &dx);
                    continue;
                }
                let mut ds = vec![0.0; h];
                {
                    let (w, dw) = store.value_and_grad(self.w_p);
                    outer_acc(dw, &dx, &step.neighbor_sum[v]);
                    matvec_t_acc(w, h, h, &dx, &mut ds);
                }
                add_assign(store.grad_mut(self.b_p), &dx);
                for &u in graph.incoming(v) {
                    add_assign(&mut dprev[u], &ds);
                }
            }
            dh = dprev;
        }

        for v in 0..n {
            add_assign(&mut dh[v], &dh0_direct[v]);
            self.init_backward(store, &inputs[v], mask, &trace.class_act[v], &trace.feat_pre[v], &dh[v]);
        }
    }

    fn gru_backward(
        &self,
        store: &mut ParamStore,
        step: &StepTrace,
        v: usize,
        h_prev: &[f64],
        dh: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let h = self.dims.hidden;
        let (x, z, r, cand) = (&step.x[v], &step.z[v], &step.r[v], &step.candidate[v]);
        let mut dx = vec![0.0; h];
        let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - z[i])).collect();

        // Candidate branch.
        let da_h: Vec<f64> = (0..h).map(|i| dh[i] * z[i] * (1.0 - cand[i] * cand[i])).collect();
        let gated: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let mut d_gated = vec![0.0; h];
        self.gate_backward(
            store,
            self.w_h,
            self.u_h,
            self.b_h,
            &da_h,
            x,
            &gated,
            &mut dx,
            &mut d_gated,
        );
        let mut da_r = vec![0.0; h];
        for i in 0..h {
            dh_prev[i] += d_gated[i] * r[i];
            da_r[i] = d_gated[i] * h_prev[i] * r[i] * (1.0 - r[i]);
        }
        self.gate_backward(
            store,
            self.w_r,
            self.u_r,
            self.b_r,
            &da_r,
            x,
            h_prev,
            &mut dx,
            &mut dh_prev,
        );

        let da_z: Vec<f64> = (0..h)
            .map(|i| dh[i] * (cand[i] - h_prev[i]) * z[i] * (1.0 - z[i]))
            .collect();
        self.gate_backward(
            store,
            self.w_z,
            self.u_z,
            self.b_z,
            &da_z,
            x,
            h_prev,
            &mut dx,
            &mut dh_prev,
        );
        (dx, dh_prev)
    }

    #[allow(clippy::too_many_arguments)]
    fn gate_backward(
        &self,
        store: &mut ParamStore,
        w: ParamId,
        u: ParamId,
        b: ParamId,
        da: &[f64],
        x: &[f64],
        state: &[f64],
        dx: &mut [f64],
        dstate: &mut [f64],
    ) {
        let h = self.dims.hidden;
        {
            let (wv, dw) = store.value_and_grad(w);
            outer_acc(dw, da, x);
            matvec_t_acc(wv, h, h, da, dx);
        }
        {
            let (uv, du) = store.value_and_grad(u);
            outer_acc(du, da, state);
            matvec_t_acc(uv, h, h, da, dstate);
        }
        add_assign(store.grad_mut(b), da);
    }

    fn init_backward(
        &self,
        store: &mut ParamStore,
        input: &NodeInput,
        mask: InputMask,
        class_act: &[f64],
        feat_pre: &[f64],
        dh0: &[f64],
    ) {
        let h = self.dims.hidden;
        let feat_act: Vec<f64> = feat_pre.iter().map(|v| v.max(0.0)).collect();
        if !mask.drop_class {
            let c = self.dims.num_classes;
            let dw = store.grad_mut(self.w_c);
            for i in 0..h {
                if class_act[i] > 0.0 {
                    let other = if mask.drop_feature { 1.0 } else { feat_act[i] };
                    dw[i * c + input.class_id] += dh0[i] * other;
                }
            }
        }
        if !mask.drop_feature {
            let dpre: Vec<f64> = (0..h)
                .map(|i| {
                    if feat_pre[i] > 0.0 {
                        let other = if mask.drop_class { 1.0 } else { class_act[i] };
                        dh0[i] * other
                    } else {
                        0.0
                    }
                })
                .collect();
            outer_acc(store.grad_mut(self.w_f), &dpre, &input.feature);
        }
    }
}

fn combine_init(class_act: &[f64], feat_pre: &[f64], hidden: usize) -> Vec<f64> {
    match (class_act.is_empty(), feat_pre.is_empty()) {
        (false, false) => class_act.iter().zip(feat_pre).map(|(c, f)| c * f.max(0.0)).collect(),
        (false, true) => class_act.to_vec(),
        (true, false) => feat_pre.iter().map(|f| f.max(0.0)).collect(),
        (true, true) => vec![0.0; hidden],
    }
}

/// Sum of neighbor states in an order that depends only on their values,
/// so relabeling nodes cannot change the floating-point result.
fn canonical_sum(states: &[&[f64]], hidden: usize) -> Vec<f64> {
    let mut sum = vec![0.0; hidden];
    match states {
        [] => {}
        [one] => sum.copy_from_slice(one),
        _ => {
            let mut sorted = states.to_vec();
            sorted.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            for s in sorted {
                add_assign(&mut sum, s);
            }
        }
    }
    sum
}
