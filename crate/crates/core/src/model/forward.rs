use std::sync::Arc;

use super::params::{Classifier, ConvParams};
use super::{Batch, ModelError};
use crate::autodiff::{Axis, Scalar, Tape, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.2;
const ELU_ALPHA: f64 = 1.0;

/// Softmax weights computed during a forward pass. Each column of `weights`
/// is normalized within every segment.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub site: String,
    pub weights: Var,
    pub segments: Arc<[usize]>,
    pub num_segments: usize,
}

impl AttentionTrace {
    /// Per-segment, per-column sums of the weights.
    pub fn segment_sums<T: Scalar>(&self, tape: &Tape<'_, T>) -> Vec<Vec<f64>> {
        let w = tape.value(self.weights);
        let mut sums = vec![vec![0.0; w.cols()]; self.num_segments];
        for (r, &s) in self.segments.iter().enumerate() {
            for (c, acc) in sums[s].iter_mut().enumerate() {
                *acc += w.get(r, c).to_f64();
            }
        }
        sums
    }
}

/// Loss, scores and per-parameter gradients of one batch.
pub type LossAndGrads<T> = (f64, Vec<f64>, Vec<Tensor<T>>);

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `B×1` veracity scores.
    pub scores: Var,
    pub attention: Vec<AttentionTrace>,
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_row(xw, b)?)
}

/// Attention-weighted sum of source rows into destination rows.
fn aggregate<T: Scalar>(tape: &mut Tape<'_, T>, values: Var, alpha: Var, batch: &Batch<T>) -> Result<Var, ModelError> {
    let msgs = tape.gather_rows(values, batch.src.clone())?;
    let weighted = tape.group_scale(msgs, alpha)?;
    Ok(tape.scatter_add_rows(weighted, batch.dst.clone(), batch.nodes)?)
}

#[allow(clippy::too_many_arguments)]
fn conv<T: Scalar>(
    tape: &mut Tape<'_, T>,
    p: &[Var],
    layer: ConvParams,
    heads: usize,
    hidden: usize,
    h: Var,
    batch: &Batch<T>,
    site: String,
) -> Result<(Var, AttentionTrace), ModelError> {
    let slope = T::from_f64(LEAKY_SLOPE);
    let n = batch.nodes;
    let (out, alpha) = match layer {
        ConvParams::Transformer {
            query_w,
            query_b,
            key_w,
            value_w,
            value_b,
            skip_w,
            skip_b,
        } => {
            let q = linear(tape, h, p[query_w], p[query_b])?;
            let k = tape.matmul(h, p[key_w])?;
            let v = linear(tape, h, p[value_w], p[value_b])?;
            let skip = linear(tape, h, p[skip_w], p[skip_b])?;
            let qe = tape.gather_rows(q, batch.dst.clone())?;
            let ke = tape.gather_rows(k, batch.src.clone())?;
            let qk = tape.mul(qe, ke)?;
            let dots = tape.group_sum(qk, heads)?;
            let logits = tape.scale(dots, T::ONE / T::from_f64((hidden / heads) as f64).sqrt())?;
            let alpha = tape.segment_softmax(logits, batch.dst.clone(), n)?;
            let agg = aggregate(tape, v, alpha, batch)?;
            (tape.add(agg, skip)?, alpha)
        }
        ConvParams::Gat {
            weight,
            att_src,
            att_dst,
            bias,
        } => {
            let x = tape.matmul(h, p[weight])?;
            let xs = tape.mul_row(x, p[att_src])?;
            let a_src = tape.group_sum(xs, heads)?;
            let xd = tape.mul_row(x, p[att_dst])?;
            let a_dst = tape.group_sum(xd, heads)?;
            let es = tape.gather_rows(a_src, batch.src.clone())?;
            let ed = tape.gather_rows(a_dst, batch.dst.clone())?;
            let e = tape.add(es, ed)?;
            let logits = tape.leaky_relu(e, slope)?;
            let alpha = tape.segment_softmax(logits, batch.dst.clone(), n)?;
            let agg = aggregate(tape, x, alpha, batch)?;
            (tape.add_row(agg, p[bias])?, alpha)
        }
        ConvParams::GatV2 {
            lin_l_w,
            lin_l_b,
            lin_r_w,
            lin_r_b,
            att,
            bias,
        } => {
            let xl = linear(tape, h, p[lin_l_w], p[lin_l_b])?;
            let xr = linear(tape, h, p[lin_r_w], p[lin_r_b])?;
            let zl = tape.gather_rows(xl, batch.src.clone())?;
            let zr = tape.gather_rows(xr, batch.dst.clone())?;
            let z = tape.add(zl, zr)?;
            let z = tape.leaky_relu(z, slope)?;
            let za = tape.mul_row(z, p[att])?;
            let logits = tape.group_sum(za, heads)?;
            let alpha = tape.segment_softmax(logits, batch.dst.clone(), n)?;
            let agg = aggregate(tape, xl, alpha, batch)?;
            (tape.add_row(agg, p[bias])?, alpha)
        }
    };
    let trace = AttentionTrace {
        site,
        weights: alpha,
        segments: batch.dst.clone(),
        num_segments: n,
    };
    Ok((out, trace))
}

impl<T: Scalar> Classifier<T> {
    /// Runs the classifier on `batch` with parameters already bound to
    /// `tape` (see [`Classifier::bind`]).
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p, T>,
        p: &[Var],
        batch: &Batch<T>,
    ) -> Result<ForwardOutput, ModelError> {
        let l = &self.layout;
        let d = self.config.hidden;
        if batch.x_text.cols() != self.config.text_dim {
            return Err(ModelError::Input {
                id: String::new(),
                message: format!(
                    "batch embeddings have dim {}, model expects {}",
                    batch.x_text.cols(),
                    self.config.text_dim
                ),
            });
        }
        let mut attention = Vec::new();

        let x_text = tape.constant(batch.x_text.clone());
        let x_struct = tape.constant(batch.x_struct.clone());
        let pr = l.projector;
        let mut text = linear(tape, x_text, p[pr.text_w], p[pr.text_b])?;
        let mut strct = linear(tape, x_struct, p[pr.struct_w], p[pr.struct_b])?;
        if let (Some(a), Some(b)) = (pr.alpha, pr.beta) {
            text = tape.scale_by(text, p[a])?;
            strct = tape.scale_by(strct, p[b])?;
        }
        let mut h = tape.add(text, strct)?;

        for (i, &(layer, heads)) in l.convs.iter().enumerate() {
            let (out, trace) = conv(tape, p, layer, heads, d, h, batch, format!("conv{}", i + 1))?;
            attention.push(trace);
            h = if i + 1 < l.convs.len() {
                tape.elu(out, T::from_f64(ELU_ALPHA))?
            } else {
                out
            };
        }

        let s = linear(tape, h, p[l.scorer_w], p[l.scorer_b])?;
        let s = tape.sigmoid(s)?;
        let h = tape.mul_col(h, s)?;

        let he = tape.gather_rows(h, batch.evidence_rows.clone())?;
        let hc = tape.gather_rows(h, batch.claim_rows.clone())?;
        let q = tape.matmul(hc, p[l.cross_q])?;
        let k = tape.matmul(he, p[l.cross_k])?;
        let v = tape.matmul(he, p[l.cross_v])?;
        let pq = tape.gather_rows(q, batch.pair_query.clone())?;
        let pk = tape.gather_rows(k, batch.pair_key.clone())?;
        let qk = tape.mul(pq, pk)?;
        let dots = tape.group_sum(qk, 1)?;
        let logits = tape.scale(dots, T::ONE / T::from_f64(d as f64).sqrt())?;
        let alpha = tape.segment_softmax(logits, batch.pair_query.clone(), batch.claim_nodes())?;
        attention.push(AttentionTrace {
            site: "cross".into(),
            weights: alpha,
            segments: batch.pair_query.clone(),
            num_segments: batch.claim_nodes(),
        });
        let pv = tape.gather_rows(v, batch.pair_key.clone())?;
        let msgs = tape.group_scale(pv, alpha)?;
        let attended = tape.scatter_add_rows(msgs, batch.pair_query.clone(), batch.claim_nodes())?;

        let g_e = tape.mean_rows(he, batch.evidence_sample.clone(), batch.size)?;
        let g_c = tape.mean_rows(hc, batch.claim_sample.clone(), batch.size)?;
        let g_a = tape.mean_rows(attended, batch.claim_sample.clone(), batch.size)?;
        let mut parts = vec![g_e, g_c, g_a];
        if self.config.edge_features {
            let block = batch.edge_block.as_ref().ok_or_else(|| ModelError::Input {
                id: String::new(),
                message: "model uses edge features but the batch has none".into(),
            })?;
            parts.push(tape.constant(block.clone()));
        }
        let f = tape.concat(&parts, Axis::Cols)?;
        let logit = linear(tape, f, p[l.head_w], p[l.head_b])?;
        let scores = tape.sigmoid(logit)?;
        Ok(ForwardOutput { scores, attention })
    }

    /// Scores for every sample of `batch`, without gradients.
    pub fn predict(&self, batch: &Batch<T>) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|t| tape.borrowed(t, false)).collect();
        let out = self.forward(&mut tape, &vars, batch)?;
        Ok(tape.value(out.scores).data().iter().map(|v| v.to_f64()).collect())
    }

    /// Mean BCE of `batch` times `weight`, back-propagated; returns the
    /// unweighted loss, the scores and one gradient per parameter.
    pub fn loss_and_grads(&self, batch: &Batch<T>, weight: T) -> Result<LossAndGrads<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, &vars, batch)?;
        let loss = tape.bce_loss(out.scores, &batch.labels, T::from_f64(1e-7))?;
        let value = tape.value(loss).item().to_f64();
        let scores = tape.value(out.scores).data().iter().map(|v| v.to_f64()).collect();
        let scaled = tape.scale(loss, weight)?;
        tape.backward(scaled)?;
        let grads = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
            .collect();
        Ok((value, scores, grads))
    }
}
