//! Cross-entropy, soft-weighted cross-entropy and the masked contrastive objective.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Class probabilities for one sample together with its true label.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    values: Vec<f64>,
    label: usize,
}

impl ProbabilityVector {
    pub fn new(values: Vec<f64>, label: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("probability vector is empty"));
        }
        if label >= values.len() {
            return Err(Error::contract(format!(
                "label {label} out of range for {} classes",
                values.len()
            )));
        }
        if values.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::contract(format!(
                "probabilities must be finite and non-negative: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(ProbabilityVector { values, label })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn num_classes(&self) -> usize {
        self.values.len()
    }

    /// Probability assigned to the true label.
    pub fn truth(&self) -> f64 {
        self.values[self.label]
    }

    /// `p[label] − max over wrong classes`.
    pub fn margin(&self) -> f64 {
        let wrong = self
            .values
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != self.label)
            .map(|(_, &p)| p)
            .fold(f64::NEG_INFINITY, f64::max);
        if wrong.is_finite() {
            self.truth() - wrong
        } else {
            self.truth()
        }
    }
}

/// Per-sample multiplier of the soft-weighted loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleWeight {
    pub w: f64,
    /// When set the weight is a constant of the graph.
    pub detached: bool,
}

/// `w = exp(−Σ_{j≠m} (p[m] − p[j]) / N)`, evaluated as the literal sum.
pub fn soft_weight(p: &ProbabilityVector) -> SampleWeight {
    let m = p.label();
    let pm = p.truth();
    let gap: f64 = p
        .values()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != m)
        .map(|(_, &pj)| pm - pj)
        .sum();
    SampleWeight {
        w: (-gap / p.num_classes() as f64).exp(),
        detached: true,
    }
}

/// Interval every soft weight lies in for `n` classes.
pub fn soft_weight_bounds(n: usize) -> (f64, f64) {
    let inv = 1.0 / n as f64;
    ((inv - 1.0).exp(), inv.exp())
}

fn check_labels(tape: &Tape, logits: Var, labels: &[usize]) -> Result<(usize, usize)> {
    let shape = tape.shape(logits);
    if shape.len() != 2 {
        return Err(Error::dim("cross_entropy", shape, &[labels.len()]));
    }
    let (batch, classes) = (shape[0], shape[1]);
    if batch != labels.len() {
        return Err(Error::dim("cross_entropy", shape, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if !tape.value(logits).all_finite() {
        return Err(Error::Numeric("logits contain non-finite values".into()));
    }
    Ok((batch, classes))
}

/// Per-sample `−log softmax(logits)[label]`, shape `[B]`.
fn per_sample_nll(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let ls = tape.log_softmax(logits)?;
    let picked = tape.gather_last(ls, labels)?;
    Ok(tape.neg(picked))
}

/// Mean cross-entropy of `logits[B, N]` against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_labels(tape, logits, labels)?;
    let nll = per_sample_nll(tape, logits, labels)?;
    Ok(tape.mean(nll))
}

/// How the soft weights enter the graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightGradient {
    /// Weights are constants; SWCE only rescales the CE gradient of each sample.
    #[default]
    Detached,
    /// Gradient also flows through the weights.
    Through,
}

/// Soft weights of every row of `logits`, from the current softmax.
pub fn batch_soft_weights(tape: &Tape, logits: Var, labels: &[usize]) -> Result<Vec<f64>> {
    let (_, classes) = check_labels(tape, logits, labels)?;
    let probs = crate::autodiff::kernels::softmax_rows(tape.value(logits).data(), classes);
    probs
        .chunks_exact(classes)
        .zip(labels)
        .map(|(row, &label)| {
            let pv = ProbabilityVector::new(row.to_vec(), label)?;
            Ok(soft_weight(&pv).w)
        })
        .collect()
}

/// Soft-weighted cross-entropy: batch mean of `w_i · CE_i` with weights
/// recomputed from the current predictions.
pub fn swce_loss(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mode: WeightGradient,
) -> Result<Var> {
    match mode {
        WeightGradient::Detached => {
            let weights = batch_soft_weights(tape, logits, labels)?;
            swce_loss_with_weights(tape, logits, labels, &weights)
        }
        WeightGradient::Through => {
            let (batch, classes) = check_labels(tape, logits, labels)?;
            let probs = tape.softmax(logits)?;
            let truth = tape.gather_last(probs, labels)?;
            let truth = tape.reshape(truth, &[batch, 1])?;
            let diffs = tape.sub(truth, probs)?;
            let mut mask = vec![1.0; batch * classes];
            for (r, &l) in labels.iter().enumerate() {
                mask[r * classes + l] = 0.0;
            }
            let mask = tape.constant(Tensor::new(&[batch, classes], mask)?);
            let wrong = tape.mul(diffs, mask)?;
            let gap = tape.sum_axis(wrong, 1)?;
            let gap = tape.reshape(gap, &[batch])?;
            let scaled = tape.scale(gap, -1.0 / classes as f64);
            let w = tape.exp(scaled);
            let nll = per_sample_nll(tape, logits, labels)?;
            let weighted = tape.mul(w, nll)?;
            Ok(tape.mean(weighted))
        }
    }
}

/// Weighted cross-entropy with caller-supplied constant weights.
pub fn swce_loss_with_weights(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    weights: &[f64],
) -> Result<Var> {
    let (batch, _) = check_labels(tape, logits, labels)?;
    if weights.len() != batch {
        return Err(Error::dim("swce_loss", &[batch], &[weights.len()]));
    }
    let nll = per_sample_nll(tape, logits, labels)?;
    let w = tape.constant(Tensor::vector(weights));
    let weighted = tape.mul(w, nll)?;
    Ok(tape.mean(weighted))
}

/// Temperature and distractor count of the contrastive objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub num_distractors: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.1,
            num_distractors: 10,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::contract(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.num_distractors == 0 {
            return Err(Error::contract("need at least one distractor"));
        }
        Ok(())
    }
}

fn check_nonzero_rows(t: &Tensor, what: &str) -> Result<()> {
    if let Some(i) = t.rows().position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::contract(format!(
            "{what} row {i} has zero norm; cosine similarity is undefined"
        )));
    }
    Ok(())
}

/// Cosine similarity of each `context[M, D]` row against its candidates
/// `[M, C, D]`, giving `[M, C]`.
pub fn cosine_scores(tape: &mut Tape, context: Var, candidates: Var) -> Result<Var> {
    let (sc, sq) = (tape.shape(context).to_vec(), tape.shape(candidates).to_vec());
    if sc.len() != 2 || sq.len() != 3 || sc[0] != sq[0] || sc[1] != sq[2] {
        return Err(Error::dim("contrastive_loss", &sc, &sq));
    }
    check_nonzero_rows(tape.value(context), "context")?;
    check_nonzero_rows(tape.value(candidates), "candidate")?;
    let (m, d) = (sc[0], sc[1]);
    let c3 = tape.reshape(context, &[m, 1, d])?;
    let prod = tape.mul(c3, candidates)?;
    let dots = tape.sum_axis(prod, 2)?;
    let c_sq = tape.square(c3)?;
    let c_norm = tape.sum_axis(c_sq, 2)?;
    let c_norm = tape.sqrt(c_norm);
    let q_sq = tape.square(candidates)?;
    let q_norm = tape.sum_axis(q_sq, 2)?;
    let q_norm = tape.sqrt(q_norm);
    let denom = tape.mul(c_norm, q_norm)?;
    let sims = tape.div(dots, denom)?;
    let c = sq[1];
    tape.reshape(sims, &[m, c])
}

/// Contrastive loss over masked steps.
///
/// `context` is `[M, D]` (one row per masked step), `candidates` is
/// `[M, K+1, D]` with the true quantized target at index 0 of each row and
/// the distractors after it. Each step contributes
/// `−log softmax(cos(c, q̃)/κ)[0]`; the result is the mean over steps.
pub fn contrastive_loss(
    tape: &mut Tape,
    context: Var,
    candidates: Var,
    temperature: f64,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let sims = cosine_scores(tape, context, candidates)?;
    let logits = tape.scale(sims, 1.0 / temperature);
    let m = tape.shape(logits)[0];
    cross_entropy(tape, logits, &vec![0; m])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(values: &[f64], label: usize) -> ProbabilityVector {
        ProbabilityVector::new(values.to_vec(), label).unwrap()
    }

    #[test]
    fn probability_vector_validation() {
        assert!(ProbabilityVector::new(vec![0.5, 0.5], 2).is_err());
        assert!(ProbabilityVector::new(vec![0.5, 0.6], 0).is_err());
        assert!(ProbabilityVector::new(vec![1.5, -0.5], 0).is_err());
        assert!(ProbabilityVector::new(vec![f64::NAN, 1.0], 0).is_err());
    }

    #[test]
    fn soft_weight_examples() {
        assert!((soft_weight(&pv(&[1.0 / 3.0; 3], 1)).w - 1.0).abs() < 1e-15);
        let w = soft_weight(&pv(&[0.8, 0.1, 0.1], 0)).w;
        assert!((w - (1.0f64 / 3.0 - 0.8).exp()).abs() < 1e-15, "{w}");
        assert!((w - 0.627089).abs() < 1e-6);
        let w = soft_weight(&pv(&[0.4, 0.3, 0.3], 0)).w;
        assert!((w - 0.935507).abs() < 1e-6, "{w}");
        let w = soft_weight(&pv(&[0.0, 0.5, 0.5], 0)).w;
        assert!((w - 1.395612).abs() < 1e-6, "{w}");
        assert_eq!(w, soft_weight_bounds(3).1);
    }

    #[test]
    fn margin_of_probability_vector() {
        assert!((pv(&[0.8, 0.1, 0.1], 0).margin() - 0.7).abs() < 1e-12);
        assert!((pv(&[0.2, 0.5, 0.3], 0).margin() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        assert!(matches!(
            cross_entropy(&mut t, l, &[3]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn contrastive_config_validation() {
        assert!(ContrastiveConfig::default().validate().is_ok());
        let bad = ContrastiveConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ContrastiveConfig {
            num_distractors: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
