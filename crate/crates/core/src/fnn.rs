//! Feedback network: a shared trunk feeding bootstrapped action and state heads.
//!
//! Each action head outputs a distribution over actions and each state head a
//! probability that the state is good. Predictions average the heads;
//! confidence is one minus the spread of the heads' individual verdicts.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffers::{FeedbackBuffer, FeedbackRecord, FeedbackTarget, Label};
use crate::error::{Error, Result};
use crate::nnet::{get_u32, put_u32};
use crate::nnet::{read_network, write_network, LayerSpec, Mode, Network};

pub const FNN_MAGIC: &[u8; 8] = b"FRSHFNN1";
const FNN_VERSION: u32 = 1;

/// Lower bound applied to every logarithm argument in the losses.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceRule {
    /// One minus the sample standard deviation of the heads' argmax indices.
    #[default]
    SampleStd,
    /// One minus the fraction of heads disagreeing with the most common verdict.
    ModalAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnConfig {
    pub heads_action: usize,
    pub heads_state: usize,
    pub trunk_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub confidence: ConfidenceRule,
}

impl Default for FnnConfig {
    fn default() -> Self {
        FnnConfig {
            heads_action: 10,
            heads_state: 10,
            trunk_width: 64,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            confidence: ConfidenceRule::SampleStd,
        }
    }
}

impl FnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads_action == 0 || self.heads_state == 0 {
            return Err(Error::config("the feedback network needs at least one head of each kind"));
        }
        if self.trunk_width == 0 || self.batch_size == 0 {
            return Err(Error::config("trunk_width and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("fnn learning_rate must be positive"));
        }
        Ok(())
    }
}

/// `−h·ln f_i − (1−h)·ln Σ_{a≠i} f_a`, with both arguments floored.
pub fn action_loss(probs: &[f64], action: usize, label: Label) -> Result<f64> {
    check_distribution(probs)?;
    if action >= probs.len() {
        return Err(Error::usage(format!("action {action} outside a {}-way distribution", probs.len())));
    }
    Ok(match label {
        Label::Good => -probs[action].max(LOG_FLOOR).ln(),
        Label::Bad => -others(probs, action).max(LOG_FLOOR).ln(),
    })
}

/// Derivative of [`action_loss`] with respect to each probability.
pub fn action_loss_grad(probs: &[f64], action: usize, label: Label) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    match label {
        Label::Good => {
            if probs[action] > LOG_FLOOR {
                g[action] = -1.0 / probs[action];
            }
        }
        Label::Bad => {
            let s = others(probs, action);
            if s > LOG_FLOOR {
                for (i, gi) in g.iter_mut().enumerate() {
                    if i != action {
                        *gi = -1.0 / s;
                    }
                }
            }
        }
    }
    g
}

fn others(probs: &[f64], action: usize) -> f64 {
    probs.iter().enumerate().filter(|&(i, _)| i != action).map(|(_, p)| p).sum()
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::numeric(format!("{probs:?} is not a probability distribution")));
    }
    Ok(())
}

/// Binary cross-entropy with floored log arguments.
pub fn state_loss(g: f64, label: Label) -> f64 {
    match label {
        Label::Good => -g.max(LOG_FLOOR).ln(),
        Label::Bad => -(1.0 - g).max(LOG_FLOOR).ln(),
    }
}

pub fn state_loss_grad(g: f64, label: Label) -> f64 {
    match label {
        Label::Good if g > LOG_FLOOR => -1.0 / g,
        Label::Bad if 1.0 - g > LOG_FLOOR => 1.0 / (1.0 - g),
        _ => 0.0,
    }
}

/// `1 − sample std` of per-head verdicts; a single head is fully confident.
pub fn sample_std_confidence(verdicts: &[f64]) -> f64 {
    let k = verdicts.len();
    if k < 2 {
        return 1.0;
    }
    let mean = verdicts.iter().sum::<f64>() / k as f64;
    let ss: f64 = verdicts.iter().map(|v| (v - mean) * (v - mean)).sum();
    1.0 - (ss / (k - 1) as f64).sqrt()
}

/// `1 −` fraction of heads disagreeing with the most common verdict.
pub fn modal_confidence(verdicts: &[usize]) -> f64 {
    if verdicts.is_empty() {
        return 1.0;
    }
    let max = verdicts.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &v in verdicts {
        counts[v] += 1;
    }
    let modal = counts.iter().copied().max().unwrap_or(0);
    1.0 - (verdicts.len() - modal) as f64 / verdicts.len() as f64
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Every head's output for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FnnPrediction {
    pub action_probs: Vec<Vec<f64>>,
    pub state_probs: Vec<f64>,
}

impl FnnPrediction {
    pub fn mean_action_probs(&self) -> Vec<f64> {
        let k = self.action_probs.len() as f64;
        let n = self.action_probs.first().map_or(0, Vec::len);
        (0..n).map(|i| self.action_probs.iter().map(|h| h[i]).sum::<f64>() / k).collect()
    }

    pub fn pred_action(&self) -> (usize, Vec<f64>) {
        let mean = self.mean_action_probs();
        (argmax(&mean), mean)
    }

    pub fn mean_state_prob(&self) -> f64 {
        self.state_probs.iter().sum::<f64>() / self.state_probs.len() as f64
    }

    pub fn pred_state(&self) -> bool {
        self.mean_state_prob() > 0.5
    }

    pub fn head_actions(&self) -> Vec<usize> {
        self.action_probs.iter().map(|h| argmax(h)).collect()
    }

    pub fn head_states(&self) -> Vec<usize> {
        self.state_probs.iter().map(|&g| usize::from(g > 0.5)).collect()
    }

    pub fn confidence_action(&self, rule: ConfidenceRule) -> f64 {
        let verdicts = self.head_actions();
        match rule {
            ConfidenceRule::SampleStd => {
                sample_std_confidence(&verdicts.iter().map(|&v| v as f64).collect::<Vec<_>>())
            }
            ConfidenceRule::ModalAgreement => modal_confidence(&verdicts),
        }
    }

    pub fn confidence_state(&self, rule: ConfidenceRule) -> f64 {
        let verdicts = self.head_states();
        match rule {
            ConfidenceRule::SampleStd => {
                sample_std_confidence(&verdicts.iter().map(|&v| v as f64).collect::<Vec<_>>())
            }
            ConfidenceRule::ModalAgreement => modal_confidence(&verdicts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnTrainReport {
    pub epochs: usize,
    pub steps: usize,
    /// Mean loss per head over the final epoch; `None` for heads with no data.
    pub action_head_loss: Vec<Option<f64>>,
    pub state_head_loss: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFnn {
    trunk: Network,
    action_heads: Vec<Network>,
    state_heads: Vec<Network>,
    observation_dim: usize,
    action_count: usize,
    confidence: ConfidenceRule,
}

fn head_specs(width: usize, out: usize, softmax: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(width, 64),
        LayerSpec::batchnorm(64),
        LayerSpec::relu(64),
        LayerSpec::dense(64, 32),
        LayerSpec::batchnorm(32),
        LayerSpec::relu(32),
        LayerSpec::dense(32, out),
        if softmax { LayerSpec::softmax(out) } else { LayerSpec::sigmoid(out) },
    ]
}

impl EnsembleFnn {
    pub fn new<R: Rng + ?Sized>(
        observation_dim: usize,
        action_count: usize,
        config: &FnnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let w = config.trunk_width;
        let trunk = Network::new(
            &[LayerSpec::dense(observation_dim, w), LayerSpec::relu(w), LayerSpec::dense(w, w), LayerSpec::relu(w)],
            rng,
        )?;
        let action_heads = (0..config.heads_action)
            .map(|_| Network::new(&head_specs(w, action_count, true), rng))
            .collect::<Result<_>>()?;
        let state_heads =
            (0..config.heads_state).map(|_| Network::new(&head_specs(w, 1, false), rng)).collect::<Result<_>>()?;
        Ok(EnsembleFnn { trunk, action_heads, state_heads, observation_dim, action_count, confidence: config.confidence })
    }

    pub fn heads_action(&self) -> usize {
        self.action_heads.len()
    }

    pub fn heads_state(&self) -> usize {
        self.state_heads.len()
    }

    pub fn observation_dim(&self) -> usize {
        self.observation_dim
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn confidence_rule(&self) -> ConfidenceRule {
        self.confidence
    }

    pub fn set_confidence_rule(&mut self, rule: ConfidenceRule) {
        self.confidence = rule;
    }

    pub fn trunk(&self) -> &Network {
        &self.trunk
    }

    pub fn action_head(&self, j: usize) -> &Network {
        &self.action_heads[j]
    }

    pub fn state_head(&self, j: usize) -> &Network {
        &self.state_heads[j]
    }

    /// Eval-mode outputs of every head for each row of `obs`.
    pub fn predict_batch(&self, obs: &Array2<f64>) -> Result<Vec<FnnPrediction>> {
        let features = self.trunk.infer(obs)?;
        let action_out = self.action_heads.iter().map(|h| h.infer(&features)).collect::<Result<Vec<_>>>()?;
        let state_out = self.state_heads.iter().map(|h| h.infer(&features)).collect::<Result<Vec<_>>>()?;
        Ok((0..obs.nrows())
            .map(|r| FnnPrediction {
                action_probs: action_out.iter().map(|o| o.row(r).to_vec()).collect(),
                state_probs: state_out.iter().map(|o| o[[r, 0]]).collect(),
            })
            .collect())
    }

    pub fn predict(&self, obs: &[f64]) -> Result<FnnPrediction> {
        let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).map_err(|e| Error::usage(e.to_string()))?;
        Ok(self.predict_batch(&x)?.remove(0))
    }

    pub fn pred_action(&self, obs: &[f64]) -> Result<(usize, Vec<f64>)> {
        Ok(self.predict(obs)?.pred_action())
    }

    pub fn pred_state(&self, obs: &[f64]) -> Result<bool> {
        Ok(self.predict(obs)?.pred_state())
    }

    pub fn confidence_action(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.predict(obs)?.confidence_action(self.confidence))
    }

    pub fn confidence_state(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.predict(obs)?.confidence_state(self.confidence))
    }

    /// Mini-batch SGD over all of `buffer` for `epochs` passes. Each head
    /// sees the whole mini-batch (so batch statistics are shared) but its
    /// loss counts only the records its mask selects, weighted by the mask
    /// value; the trunk accumulates the gradients of every head.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        buffer: &FeedbackBuffer,
        config: &FnnConfig,
        epochs: usize,
        rng: &mut R,
    ) -> Result<FnnTrainReport> {
        config.validate()?;
        if buffer.is_empty() {
            return Err(Error::NotReady("feedback buffer is empty".into()));
        }
        let records = buffer.records();
        for r in records {
            let k = match r.target {
                FeedbackTarget::Action => self.heads_action(),
                FeedbackTarget::State => self.heads_state(),
            };
            if r.mask.len() != k {
                return Err(Error::usage(format!("record mask has {} entries, expected {k}", r.mask.len())));
            }
            if r.observation.len() != self.observation_dim {
                return Err(Error::usage("record observation has the wrong dimension"));
            }
            if r.action.is_some_and(|a| a >= self.action_count) {
                return Err(Error::usage("record action out of range"));
            }
        }
        let mut order: Vec<usize> = (0..records.len()).collect();
        let mut report = FnnTrainReport {
            epochs,
            steps: 0,
            action_head_loss: vec![None; self.heads_action()],
            state_head_loss: vec![None; self.heads_state()],
        };
        for _ in 0..epochs {
            order.shuffle(rng);
            let mut sums_a = vec![(0.0, 0.0); self.heads_action()];
            let mut sums_s = vec![(0.0, 0.0); self.heads_state()];
            for chunk in order.chunks(config.batch_size) {
                let batch: Vec<&FeedbackRecord> = chunk.iter().map(|&i| &records[i]).collect();
                self.train_batch(&batch, config.learning_rate, &mut sums_a, &mut sums_s)?;
                report.steps += 1;
            }
            report.action_head_loss = sums_a.iter().map(|&(l, w)| (w > 0.0).then(|| l / w)).collect();
            report.state_head_loss = sums_s.iter().map(|&(l, w)| (w > 0.0).then(|| l / w)).collect();
        }
        Ok(report)
    }

    fn train_batch(
        &mut self,
        batch: &[&FeedbackRecord],
        lr: f64,
        sums_a: &mut [(f64, f64)],
        sums_s: &mut [(f64, f64)],
    ) -> Result<()> {
        let mut x = Array2::zeros((batch.len(), self.observation_dim));
        for (r, rec) in batch.iter().enumerate() {
            x.row_mut(r).iter_mut().zip(&rec.observation).for_each(|(d, s)| *d = *s);
        }
        let features = self.trunk.forward(&x, Mode::Train)?;
        let mut d_features = Array2::zeros(features.raw_dim());
        let mut trunk_used = false;

        for (j, head) in self.action_heads.iter_mut().enumerate() {
            let rows: Vec<(usize, f64)> = batch
                .iter()
                .enumerate()
                .filter(|(_, rec)| rec.target == FeedbackTarget::Action && rec.mask[j] > 0.0)
                .map(|(r, rec)| (r, rec.mask[j]))
                .collect();
            let Some(total) = weight_total(&rows) else { continue };
            let out = head.forward(&features, head_mode(batch.len()))?;
            let mut upstream = Array2::zeros(out.raw_dim());
            for &(r, w) in &rows {
                let rec = batch[r];
                let action = rec.action.expect("validated action record");
                let probs = out.row(r).to_vec();
                let loss = action_loss(&probs, action, rec.label)?;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!("non-finite loss in action head {j}")));
                }
                sums_a[j].0 += w * loss;
                sums_a[j].1 += w;
                for (u, g) in upstream.row_mut(r).iter_mut().zip(action_loss_grad(&probs, action, rec.label)) {
                    *u = w / total * g;
                }
            }
            d_features += &head.backward(&upstream)?;
            head.sgd_step(lr).map_err(|e| Error::numeric(format!("action head {j}: {e}")))?;
            trunk_used = true;
        }

        for (j, head) in self.state_heads.iter_mut().enumerate() {
            let rows: Vec<(usize, f64)> = batch
                .iter()
                .enumerate()
                .filter(|(_, rec)| rec.target == FeedbackTarget::State && rec.mask[j] > 0.0)
                .map(|(r, rec)| (r, rec.mask[j]))
                .collect();
            let Some(total) = weight_total(&rows) else { continue };
            let out = head.forward(&features, head_mode(batch.len()))?;
            let mut upstream = Array2::zeros(out.raw_dim());
            for &(r, w) in &rows {
                let rec = batch[r];
                let g = out[[r, 0]];
                let loss = state_loss(g, rec.label);
                if !loss.is_finite() {
                    return Err(Error::numeric(format!("non-finite loss in state head {j}")));
                }
                sums_s[j].0 += w * loss;
                sums_s[j].1 += w;
                upstream[[r, 0]] = w / total * state_loss_grad(g, rec.label);
            }
            d_features += &head.backward(&upstream)?;
            head.sgd_step(lr).map_err(|e| Error::numeric(format!("state head {j}: {e}")))?;
            trunk_used = true;
        }

        if trunk_used {
            self.trunk.backward(&d_features)?;
            self.trunk.sgd_step(lr)?;
        } else {
            self.trunk.zero_grad();
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FNN_MAGIC)?;
        put_u32(w, FNN_VERSION)?;
        put_u32(w, self.heads_action() as u32)?;
        put_u32(w, self.heads_state() as u32)?;
        put_u32(w, self.action_count as u32)?;
        put_u32(w, self.observation_dim as u32)?;
        put_u32(w, match self.confidence {
            ConfidenceRule::SampleStd => 0,
            ConfidenceRule::ModalAgreement => 1,
        })?;
        write_network(w, &self.trunk)?;
        for h in self.action_heads.iter().chain(&self.state_heads) {
            write_network(w, h)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FNN_MAGIC {
            return Err(Error::Format("not a feedback network file (bad magic)".into()));
        }
        let version = get_u32(r)?;
        if version != FNN_VERSION {
            return Err(Error::Format(format!("unsupported feedback network version {version}")));
        }
        let ka = get_u32(r)? as usize;
        let ks = get_u32(r)? as usize;
        let action_count = get_u32(r)? as usize;
        let observation_dim = get_u32(r)? as usize;
        let confidence = match get_u32(r)? {
            0 => ConfidenceRule::SampleStd,
            1 => ConfidenceRule::ModalAgreement,
            other => return Err(Error::Format(format!("unknown confidence rule {other}"))),
        };
        let trunk = read_network(r)?;
        let action_heads = (0..ka).map(|_| read_network(r)).collect::<Result<Vec<_>>>()?;
        let state_heads = (0..ks).map(|_| read_network(r)).collect::<Result<Vec<_>>>()?;
        if trunk.input_dim() != observation_dim
            || action_heads.iter().any(|h| h.input_dim() != trunk.output_dim() || h.output_dim() != action_count)
            || state_heads.iter().any(|h| h.input_dim() != trunk.output_dim() || h.output_dim() != 1)
        {
            return Err(Error::Format("feedback network header does not match its layers".into()));
        }
        Ok(EnsembleFnn { trunk, action_heads, state_heads, observation_dim, action_count, confidence })
    }
}

fn weight_total(rows: &[(usize, f64)]) -> Option<f64> {
    let total: f64 = rows.iter().map(|&(_, w)| w).sum();
    (total > 0.0).then_some(total)
}

/// Batch normalisation needs two rows for batch statistics.
fn head_mode(rows: usize) -> Mode {
    if rows >= 2 {
        Mode::Train
    } else {
        Mode::Eval
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buffers::{FeedbackSource, MaskDistribution};
    use crate::rng::{stream, Stream};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn action_loss_worked_values() {
        assert_eq!(action_loss(&[1.0, 0.0, 0.0], 0, Label::Good).unwrap(), 0.0);
        let p = [0.5, 0.3, 0.2];
        assert!(close(action_loss(&p, 0, Label::Good).unwrap(), 0.5f64.ln().abs(), 1e-12));
        assert!(close(action_loss(&p, 0, Label::Bad).unwrap(), 0.5f64.ln().abs(), 1e-12));
        assert!(action_loss(&[0.7, 0.7], 0, Label::Good).is_err());
        assert!(action_loss(&[1.0, 0.0], 0, Label::Bad).unwrap().is_finite());
    }

    #[test]
    fn state_loss_worked_values() {
        assert!(state_loss(1.0 - 1e-9, Label::Good) < 1e-8);
        assert!(close(state_loss(0.5, Label::Good), std::f64::consts::LN_2, 1e-12));
        assert!(close(state_loss(0.9, Label::Bad), std::f64::consts::LN_10, 1e-9));
        assert!(state_loss(0.0, Label::Good).is_finite());
    }

    #[test]
    fn confidence_worked_values() {
        assert_eq!(sample_std_confidence(&[3.0; 10]), 1.0);
        let split: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        assert!(close(sample_std_confidence(&split), 1.0 - (2.5f64 / 9.0).sqrt(), 1e-12));
        assert!(close(sample_std_confidence(&split), 0.4730, 1e-4));
        let nine_one: Vec<f64> = (0..10).map(|i| if i < 9 { 2.0 } else { 3.0 }).collect();
        assert!(close(sample_std_confidence(&nine_one), 0.6838, 1e-4));
        assert!(close(sample_std_confidence(&[0.0, 1.0]), 1.0 - 0.5f64.sqrt(), 1e-12));
        assert_eq!(sample_std_confidence(&[4.0]), 1.0);
        assert_eq!(modal_confidence(&[0, 0, 0, 3]), 0.75);
    }

    fn prediction(action_probs: Vec<Vec<f64>>, state_probs: Vec<f64>) -> FnnPrediction {
        FnnPrediction { action_probs, state_probs }
    }

    #[test]
    fn aggregate_predictions() {
        let p = prediction(vec![vec![0.9, 0.1], vec![0.7, 0.3]], vec![0.6, 0.7, 0.8]);
        let (a, mean) = p.pred_action();
        assert_eq!(a, 0);
        assert!(close(mean[0], 0.8, 1e-12) && close(mean[1], 0.2, 1e-12));
        assert!(p.pred_state());
        let uniform = prediction(vec![vec![0.25; 4]; 3], vec![0.5; 3]);
        assert_eq!(uniform.pred_action().0, 0);
        assert!(!uniform.pred_state());
        assert!(!prediction(vec![vec![0.2, 0.8]], vec![0.49; 4]).pred_state());
        assert_eq!(prediction(vec![vec![0.2, 0.8]], vec![0.1]).pred_action().0, 1);
    }

    #[test]
    fn state_confidence_split() {
        let p = prediction(vec![vec![1.0]], (0..10).map(|i| if i < 5 { 0.2 } else { 0.8 }).collect());
        assert!(close(p.confidence_state(ConfidenceRule::SampleStd), 0.4730, 1e-4));
        let p = prediction(vec![vec![1.0]], vec![0.2, 0.8]);
        assert!(close(p.confidence_state(ConfidenceRule::SampleStd), 0.2929, 1e-4));
    }

    fn fnn(ka: usize, ks: usize, seed: u64) -> (EnsembleFnn, FnnConfig) {
        let config = FnnConfig { heads_action: ka, heads_state: ks, ..FnnConfig::default() };
        let mut rng = stream(seed, Stream::FnnInit);
        (EnsembleFnn::new(3, 4, &config, &mut rng).unwrap(), config)
    }

    #[test]
    fn outputs_are_distributions() {
        let (net, _) = fnn(3, 2, 0);
        let p = net.predict(&[0.1, -0.4, 0.9]).unwrap();
        for h in &p.action_probs {
            assert!(close(h.iter().sum::<f64>(), 1.0, 1e-9));
        }
        assert!(p.state_probs.iter().all(|g| *g > 0.0 && *g < 1.0));
    }

    #[test]
    fn overfits_a_single_record() {
        let (mut net, config) = fnn(1, 1, 1);
        let config = FnnConfig { learning_rate: 0.05, ..config };
        let mut buf = FeedbackBuffer::new();
        let obs = vec![0.3, 0.6, -0.2];
        buf.append(FeedbackRecord::action(obs.clone(), 2, Label::Good, vec![1.0], FeedbackSource::Oracle, 0)).unwrap();
        let mut rng = stream(1, Stream::FnnTraining);
        net.train(&buf, &config, 300, &mut rng).unwrap();
        let probs = &net.predict(&obs).unwrap().action_probs[0];
        assert!(action_loss(probs, 2, Label::Good).unwrap() < 0.05, "{probs:?}");
    }

    #[test]
    fn head_without_data_is_untouched() {
        let (mut net, config) = fnn(2, 2, 2);
        let before_a1 = net.action_head(1).clone();
        let before_s = (net.state_head(0).clone(), net.state_head(1).clone());
        let mut buf = FeedbackBuffer::new();
        for i in 0..10 {
            let obs = vec![i as f64 / 10.0, 0.5, 0.1];
            buf.append(FeedbackRecord::action(obs, i % 4, Label::Good, vec![1.0, 0.0], FeedbackSource::Oracle, 0))
                .unwrap();
        }
        let mut rng = stream(2, Stream::FnnTraining);
        let report = net.train(&buf, &config, 3, &mut rng).unwrap();
        assert_eq!(net.action_head(1), &before_a1);
        assert_eq!((net.state_head(0).clone(), net.state_head(1).clone()), before_s);
        assert!(report.action_head_loss[0].is_some_and(f64::is_finite));
        assert_eq!(report.action_head_loss[1], None);
    }

    #[test]
    fn retraining_is_deterministic() {
        let mut buf = FeedbackBuffer::new();
        let mut mrng = stream(3, Stream::Masks);
        let dist = MaskDistribution::default();
        for i in 0..50 {
            let obs = vec![(i % 7) as f64 / 7.0, (i % 3) as f64 / 3.0, 0.2];
            let rec = if i % 2 == 0 {
                FeedbackRecord::action(obs, i % 4, Label::Good, dist.sample(4, &mut mrng), FeedbackSource::Oracle, 0)
            } else {
                FeedbackRecord::state(obs, Label::Bad, dist.sample(3, &mut mrng), FeedbackSource::Oracle, 0)
            };
            buf.append(rec).unwrap();
        }
        let run = || {
            let (mut net, config) = fnn(4, 3, 9);
            net.train(&buf, &config, 4, &mut stream(9, Stream::FnnTraining)).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_buffer_is_not_ready() {
        let (mut net, config) = fnn(2, 2, 0);
        let mut rng = stream(0, Stream::FnnTraining);
        assert!(matches!(net.train(&FeedbackBuffer::new(), &config, 1, &mut rng), Err(Error::NotReady(_))));
    }

    #[test]
    fn sidecar_round_trip() {
        let (net, _) = fnn(3, 2, 4);
        let mut bytes = Vec::new();
        net.write(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], FNN_MAGIC);
        let back = EnsembleFnn::read(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!((back.heads_action(), back.heads_state(), back.action_count()), (3, 2, 4));
    }
}
