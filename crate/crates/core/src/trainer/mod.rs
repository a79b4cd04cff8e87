//! The training loop: random play, initial feedback, the first fit of the
//! feedback network, then episodes of shaped double DQN interleaved with
//! feedback sessions and refits.

mod config;
mod eval;
mod metrics;
mod session;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{FeedbackKinds, FeedbackSourceKind, ShapingTiming, TrainRunConfig};
pub use eval::{
    evaluate_fnn, evaluate_optimal, evaluate_q, evaluate_random, evaluate_with, evaluation_seeds, mean_std,
    EvalStats, PolicyMode,
};
pub use metrics::{read_metrics_csv, write_metrics_csv, EpisodeMetrics, EvalRecord, ScheduleEvent, METRICS_HEADER};
pub use session::{run_oracle_session, FeedbackSession, SessionHandler};

use crate::agent::{QNetworkPair, TdSample};
use crate::buffers::{FeedbackBuffer, FeedbackTarget, ReplayBuffer};
use crate::envs::{make_env, Environment};
use crate::error::{Error, Result};
use crate::fnn::EnsembleFnn;
use crate::oracle::{Oracle, OracleConfig};
use crate::rng::{stream, RngState, Stream};
use crate::shaping::{shape_with_verdicts, unshaped, ShapedStep, Verdict};

const CHECKPOINT_FORMAT: u32 = 1;
const CACHE_LIMIT: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Training,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: u64,
    pub global_steps: u64,
    pub feedback_total: usize,
    pub refits: usize,
    pub final_eval: Option<EvalStats>,
}

struct Streams {
    env_seeds: ChaCha8Rng,
    exploration: ChaCha8Rng,
    replay: ChaCha8Rng,
    masks: ChaCha8Rng,
    fnn_training: ChaCha8Rng,
    random_play: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            env_seeds: stream(seed, Stream::EnvSeeds),
            exploration: stream(seed, Stream::Exploration),
            replay: stream(seed, Stream::Replay),
            masks: stream(seed, Stream::Masks),
            fnn_training: stream(seed, Stream::FnnTraining),
            random_play: stream(seed, Stream::RandomPlay),
        }
    }

    fn capture(&self) -> BTreeMap<String, RngState> {
        [
            ("env_seeds", &self.env_seeds),
            ("exploration", &self.exploration),
            ("replay", &self.replay),
            ("masks", &self.masks),
            ("fnn_training", &self.fnn_training),
            ("random_play", &self.random_play),
        ]
        .into_iter()
        .map(|(k, r)| (k.to_string(), RngState::capture(r)))
        .collect()
    }

    fn restore(states: &BTreeMap<String, RngState>) -> Result<Self> {
        let get = |k: &str| {
            states.get(k).ok_or_else(|| Error::Format(format!("checkpoint lacks rng stream {k}")))?.restore()
        };
        Ok(Streams {
            env_seeds: get("env_seeds")?,
            exploration: get("exploration")?,
            replay: get("replay")?,
            masks: get("masks")?,
            fnn_training: get("fnn_training")?,
            random_play: get("random_play")?,
        })
    }
}

/// Ensemble verdicts keyed by the exact bits of an observation; valid for one
/// version of the feedback network.
#[derive(Default)]
struct VerdictCache {
    version: u64,
    map: HashMap<Vec<u64>, Verdict>,
}

fn obs_key(obs: &[f64]) -> Vec<u64> {
    obs.iter().map(|v| v.to_bits()).collect()
}

impl VerdictCache {
    fn lookup(&mut self, fnn: &EnsembleFnn, version: u64, observations: &[&[f64]]) -> Result<Vec<Verdict>> {
        if version != self.version || self.map.len() > CACHE_LIMIT {
            self.map.clear();
            self.version = version;
        }
        let keys: Vec<Vec<u64>> = observations.iter().map(|o| obs_key(o)).collect();
        let mut pending = HashSet::new();
        let missing: Vec<usize> =
            (0..keys.len()).filter(|&i| !self.map.contains_key(&keys[i]) && pending.insert(&keys[i])).collect();
        if !missing.is_empty() {
            let dim = fnn.observation_dim();
            let mut rows = Array2::zeros((missing.len(), dim));
            for (r, &i) in missing.iter().enumerate() {
                if observations[i].len() != dim {
                    return Err(Error::usage("observation has the wrong dimension for the feedback network"));
                }
                for (c, &v) in observations[i].iter().enumerate() {
                    rows[[r, c]] = v;
                }
            }
            let rule = fnn.confidence_rule();
            for (&i, p) in missing.iter().zip(fnn.predict_batch(&rows)?) {
                self.map.insert(keys[i].clone(), Verdict::of(&p, rule));
            }
        }
        Ok(keys.iter().map(|k| self.map[k]).collect())
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: u32,
    config: TrainRunConfig,
    stage: Stage,
    episode: u64,
    global_step: u64,
    fnn_version: u64,
    feedback_counter: usize,
    replay: ReplayBuffer,
    reviewed: BTreeSet<u64>,
    rngs: BTreeMap<String, RngState>,
    oracle_rng: Option<RngState>,
    metrics: Vec<EpisodeMetrics>,
    events: Vec<ScheduleEvent>,
    evals: Vec<EvalRecord>,
    frozen: BTreeMap<u64, f64>,
}

/// Initial feedback gathered once and reused by several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFeedback {
    pub feedback: FeedbackBuffer,
    pub reviewed: BTreeSet<u64>,
}

pub struct Trainer {
    config: TrainRunConfig,
    env: Box<dyn Environment>,
    q: QNetworkPair,
    fnn: Option<EnsembleFnn>,
    fnn_version: u64,
    replay: ReplayBuffer,
    reviewed: BTreeSet<u64>,
    feedback: FeedbackBuffer,
    oracle: Option<Oracle>,
    rngs: Streams,
    global_step: u64,
    episode: u64,
    stage: Stage,
    metrics: Vec<EpisodeMetrics>,
    events: Vec<ScheduleEvent>,
    evals: Vec<EvalRecord>,
    cache: VerdictCache,
    frozen: BTreeMap<u64, f64>,
    output: Option<PathBuf>,
    preset: Option<SharedFeedback>,
}

fn oracle_config(config: &TrainRunConfig) -> OracleConfig {
    OracleConfig { seed: config.seed.wrapping_add(config.oracle.seed), ..config.oracle.clone() }
}

impl Trainer {
    pub fn new(config: TrainRunConfig) -> Result<Self> {
        config.validate()?;
        let env = make_env(config.env_id, &config.env)?;
        let spec = env.spec().clone();
        let q = QNetworkPair::new(
            spec.observation_dim,
            spec.action_count,
            config.agent.hidden,
            &mut stream(config.seed, Stream::QInit),
        )?;
        let fnn = if config.uses_feedback() {
            Some(EnsembleFnn::new(
                spec.observation_dim,
                spec.action_count,
                &config.fnn,
                &mut stream(config.seed, Stream::FnnInit),
            )?)
        } else {
            None
        };
        let oracle = if config.feedback_source == FeedbackSourceKind::Oracle {
            Some(Oracle::new(oracle_config(&config), env.as_ref())?)
        } else {
            None
        };
        Ok(Trainer {
            replay: ReplayBuffer::new(config.replay_capacity)?,
            rngs: Streams::new(config.seed),
            config,
            env,
            q,
            fnn,
            fnn_version: 0,
            reviewed: BTreeSet::new(),
            feedback: FeedbackBuffer::new(),
            oracle,
            global_step: 0,
            episode: 0,
            stage: Stage::Warmup,
            metrics: Vec::new(),
            events: Vec::new(),
            evals: Vec::new(),
            cache: VerdictCache::default(),
            frozen: BTreeMap::new(),
            output: None,
            preset: None,
        })
    }

    /// Uses `shared` instead of running the initial sessions. Records are
    /// filtered to this run's feedback kinds and given fresh masks.
    pub fn with_shared_feedback(mut self, shared: SharedFeedback) -> Self {
        self.preset = Some(shared);
        self
    }

    /// Random play plus the initial sessions of `config`, for reuse across runs
    /// that share its seed and environment.
    pub fn collect_initial_feedback(config: TrainRunConfig) -> Result<SharedFeedback> {
        let mut t = Trainer::new(config)?;
        t.warmup_data(None)?;
        Ok(SharedFeedback { feedback: t.feedback, reviewed: t.reviewed })
    }

    /// Writes metrics, events and checkpoints under `dir` as the run progresses.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output = Some(dir.into());
        self
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn metrics(&self) -> &[EpisodeMetrics] {
        &self.metrics
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        &self.events
    }

    pub fn evals(&self) -> &[EvalRecord] {
        &self.evals
    }

    pub fn q(&self) -> &QNetworkPair {
        &self.q
    }

    pub fn fnn(&self) -> Option<&EnsembleFnn> {
        self.fnn.as_ref()
    }

    pub fn fnn_version(&self) -> u64 {
        self.fnn_version
    }

    pub fn feedback(&self) -> &FeedbackBuffer {
        &self.feedback
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn env_mut(&mut self) -> &mut dyn Environment {
        self.env.as_mut()
    }

    /// Runs to `total_episodes`.
    pub fn run<'h>(&mut self, handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<RunSummary> {
        self.run_until(self.config.total_episodes, handler)
    }

    /// Runs until `episodes` main-loop episodes have completed (or the run ends).
    pub fn run_until<'h>(&mut self, episodes: u64, mut handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<RunSummary> {
        if self.stage == Stage::Warmup {
            self.warmup(handler.as_deref_mut())?;
            self.stage = Stage::Training;
            self.save_outputs()?;
        }
        let stop = episodes.min(self.config.total_episodes);
        while self.stage == Stage::Training && self.episode < stop {
            let m = self.run_episode()?;
            log::debug!("episode {} return {} steps {}", m.episode, m.return_env, m.steps);
            self.metrics.push(m);
            self.after_episode(handler.as_deref_mut())?;
            self.episode += 1;
            if self.episode >= self.config.total_episodes {
                self.stage = Stage::Finished;
            }
            let e = self.config.eval_every;
            if self.stage == Stage::Finished || (e > 0 && self.episode.is_multiple_of(e)) {
                self.save_outputs()?;
            }
        }
        let final_eval = if self.stage == Stage::Finished && self.config.eval_episodes > 0 {
            Some(self.evaluate_q()?)
        } else {
            None
        };
        if let (Some(dir), Some(stats)) = (&self.output, &final_eval) {
            fs::write(dir.join("final_eval.json"), serde_json::to_vec_pretty(stats)?)?;
        }
        Ok(RunSummary {
            episodes: self.episode,
            global_steps: self.global_step,
            feedback_total: self.feedback.len(),
            refits: self.events.iter().filter(|e| matches!(e, ScheduleEvent::Refit { .. })).count(),
            final_eval,
        })
    }

    pub fn evaluate_q(&mut self) -> Result<EvalStats> {
        let seed = self.config.seed;
        evaluate_q(&self.q, self.env.as_mut(), self.config.eval_episodes, seed)
    }

    fn warmup<'h>(&mut self, handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<()> {
        self.warmup_data(handler)?;
        if self.feedback.is_empty() {
            if self.config.uses_feedback() {
                log::warn!("no initial feedback; shaping stays off until labels arrive");
            }
            return Ok(());
        }
        self.fit(self.config.initial_fnn_epochs)?;
        self.events.push(ScheduleEvent::InitialFit { records: self.feedback.len() });
        Ok(())
    }

    fn warmup_data<'h>(&mut self, mut handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<()> {
        let n = self.env.spec().action_count;
        let max_steps = self.env.spec().max_episode_steps;
        for _ in 0..self.config.n_i {
            let env_seed: u64 = self.rngs.random_play.random();
            let (mut obs, _) = self.env.reset(env_seed);
            self.replay.begin_trajectory(0, env_seed)?;
            for t in 0..max_steps {
                let action = self.rngs.random_play.random_range(0..n);
                let step = self.env.step(action)?;
                let terminal = step.terminal || t + 1 == max_steps;
                self.replay.push(obs, action, step.reward, step.next_observation.clone(), terminal)?;
                obs = step.next_observation;
                if terminal {
                    break;
                }
            }
        }
        if !self.config.uses_feedback() {
            return Ok(());
        }
        if let Some(shared) = self.preset.take() {
            let kinds = self.config.feedback_type;
            let kept = shared.feedback.filtered(|r| match r.target {
                FeedbackTarget::Action => kinds.wants_actions(),
                FeedbackTarget::State => kinds.wants_states(),
            });
            let fnn = &self.config.fnn;
            self.feedback = kept.remasked(&self.config.masking, fnn.heads_action, fnn.heads_state, &mut self.rngs.masks);
            self.reviewed = shared.reviewed;
            self.events.push(ScheduleEvent::InitialSession { appended: self.feedback.len() });
            return Ok(());
        }
        let target = self.config.initial_feedback();
        while self.feedback.len() < target {
            let budget = self.config.oracle.session_budget.min(target - self.feedback.len());
            let appended = self.session(budget, handler.as_deref_mut())?;
            self.events.push(ScheduleEvent::InitialSession { appended });
            if appended == 0 {
                log::warn!("initial feedback stopped at {} of {target} records", self.feedback.len());
                break;
            }
        }
        Ok(())
    }

    fn fit(&mut self, epochs: usize) -> Result<()> {
        let fnn = self.fnn.as_mut().ok_or_else(|| Error::usage("run has no feedback network"))?;
        fnn.train(&self.feedback, &self.config.fnn, epochs, &mut self.rngs.fnn_training)?;
        self.feedback.reset_counter();
        self.fnn_version += 1;
        Ok(())
    }

    fn session<'h>(&mut self, budget: usize, handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<usize> {
        let mut session = FeedbackSession {
            replay: &mut self.replay,
            reviewed: &mut self.reviewed,
            feedback: &mut self.feedback,
            mask_rng: &mut self.rngs.masks,
            env: self.env.as_mut(),
            masking: self.config.masking,
            heads_action: self.config.fnn.heads_action,
            heads_state: self.config.fnn.heads_state,
            kinds: self.config.feedback_type,
            priority: self.config.priority,
            budget,
            appended: 0,
            episode: self.episode,
        };
        match self.config.feedback_source {
            FeedbackSourceKind::Oracle => {
                let oracle = self.oracle.as_mut().ok_or_else(|| Error::usage("oracle is not configured"))?;
                run_oracle_session(oracle, &mut session)?;
            }
            FeedbackSourceKind::Interactive => {
                let h = handler.ok_or_else(|| Error::usage("interactive feedback needs a session handler"))?;
                h.run_session(&mut session)?;
            }
            FeedbackSourceKind::None => {}
        }
        Ok(session.appended)
    }

    fn after_episode<'h>(&mut self, handler: Option<&mut (dyn SessionHandler + 'h)>) -> Result<()> {
        let e = self.episode;
        if !self.config.uses_feedback() || !(e + 1).is_multiple_of(self.config.n_c) {
            return Ok(());
        }
        let appended = self.session(self.config.oracle.session_budget, handler)?;
        let counter = self.feedback.new_since_update();
        self.events.push(ScheduleEvent::Session { after_episode: e, appended, counter });
        if counter >= self.config.n_f {
            self.fit(self.config.fnn.epochs)?;
            self.events.push(ScheduleEvent::Refit { after_episode: e, records: self.feedback.len() });
            log::info!("refit feedback network after episode {e} on {} records", self.feedback.len());
        }
        Ok(())
    }

    fn shaping_enabled(&self) -> bool {
        self.fnn_version > 0 && self.config.shaping.is_active()
    }

    fn shape(&mut self, obs: &[f64], action: usize, env_reward: f64, next: &[f64]) -> Result<(ShapedStep, Option<usize>)> {
        if !self.shaping_enabled() {
            return Ok((unshaped(&self.config.shaping, env_reward), None));
        }
        let fnn = self.fnn.as_ref().ok_or_else(|| Error::usage("run has no feedback network"))?;
        let v = self.cache.lookup(fnn, self.fnn_version, &[obs, next])?;
        let step = shape_with_verdicts(&self.config.shaping, self.episode, &v[0], &v[1], obs, action, env_reward, next)?;
        Ok((step, Some(v[0].action)))
    }

    fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let schedule = self.config.agent.schedule();
        let max_steps = self.env.spec().max_episode_steps;
        let env_seed: u64 = self.rngs.env_seeds.random();
        let (mut obs, _) = self.env.reset(env_seed);
        self.replay.begin_trajectory(self.episode, env_seed)?;
        let mut m = EpisodeMetrics {
            episode: self.episode,
            return_env: 0.0,
            return_shaped: 0.0,
            steps: 0,
            epsilon: schedule.epsilon(self.global_step),
            r_a_fired: 0,
            r_s_fired: 0,
            cycles_penalized: 0,
            fnn_agreement: 0.0,
            feedback_total: 0,
        };
        let mut agreed = 0u64;
        let mut judged = 0u64;
        for t in 0..max_steps {
            let epsilon = schedule.epsilon(self.global_step);
            let action = self.q.select_action(&obs, epsilon, &mut self.rngs.exploration)?;
            let step = self.env.step(action)?;
            let terminal = step.terminal || t + 1 == max_steps;
            let (shaped, fnn_action) = self.shape(&obs, action, step.reward, &step.next_observation)?;
            let serial = self.replay.push(obs, action, step.reward, step.next_observation.clone(), terminal)?;
            if self.config.shaping_timing == ShapingTiming::AtCollection && fnn_action.is_some() {
                self.frozen.insert(serial, shaped.reward);
            }
            if let Some(a) = fnn_action {
                judged += 1;
                agreed += u64::from(a == action);
            }
            m.return_env += step.reward;
            m.return_shaped += shaped.reward;
            m.r_a_fired += u64::from(shaped.r_a);
            m.r_s_fired += u64::from(shaped.r_s);
            m.cycles_penalized += u64::from(shaped.cycle && (shaped.r_a | shaped.r_s) > 0);
            m.steps += 1;
            self.global_step += 1;
            let ready = self.replay.len() >= self.config.agent.learning_starts.max(self.config.agent.batch_size);
            if ready && self.global_step.is_multiple_of(self.config.agent.train_every) {
                self.td_step()?;
            }
            if self.global_step.is_multiple_of(self.config.agent.sync_every) {
                self.q.sync();
            }
            obs = step.next_observation;
            if terminal {
                break;
            }
        }
        if let Some(first) = self.replay.transitions().next().map(|t| t.serial) {
            self.frozen = self.frozen.split_off(&first);
        }
        m.fnn_agreement = if judged > 0 { agreed as f64 / judged as f64 } else { 0.0 };
        m.feedback_total = self.feedback.len() as u64;
        Ok(m)
    }

    fn td_step(&mut self) -> Result<()> {
        let Trainer { replay, q, fnn, cache, frozen, config, rngs, fnn_version, episode, .. } = self;
        let batch = replay.sample_transition_batch(config.agent.batch_size, &mut rngs.replay)?;
        let shaping = &config.shaping;
        let rewards: Vec<f64> = match (config.shaping_timing, fnn.as_ref()) {
            (ShapingTiming::AtUpdate, Some(f)) if *fnn_version > 0 && shaping.is_active() => {
                let observations: Vec<&[f64]> =
                    batch.iter().flat_map(|t| [t.observation.as_slice(), t.next_observation.as_slice()]).collect();
                let v = cache.lookup(f, *fnn_version, &observations)?;
                batch
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        shape_with_verdicts(
                            shaping,
                            *episode,
                            &v[2 * i],
                            &v[2 * i + 1],
                            &t.observation,
                            t.action,
                            t.env_reward,
                            &t.next_observation,
                        )
                        .map(|s| s.reward)
                    })
                    .collect::<Result<_>>()?
            }
            (ShapingTiming::AtCollection, _) => batch
                .iter()
                .map(|t| frozen.get(&t.serial).copied().unwrap_or_else(|| unshaped(shaping, t.env_reward).reward))
                .collect(),
            _ => batch.iter().map(|t| unshaped(shaping, t.env_reward).reward).collect(),
        };
        let samples: Vec<TdSample<'_>> = batch
            .iter()
            .zip(&rewards)
            .map(|(t, &reward)| TdSample {
                observation: &t.observation,
                action: t.action,
                reward,
                next_observation: &t.next_observation,
                terminal: t.terminal,
            })
            .collect();
        let loss = q.td_update(&samples, config.agent.gamma, config.agent.learning_rate)?;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("TD loss became {loss}")));
        }
        Ok(())
    }

    fn save_outputs(&mut self) -> Result<()> {
        let Some(dir) = self.output.clone() else { return Ok(()) };
        fs::create_dir_all(&dir)?;
        write_metrics_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?), &self.metrics)?;
        let mut events = BufWriter::new(File::create(dir.join("schedule.jsonl"))?);
        for e in &self.events {
            serde_json::to_writer(&mut events, e)?;
            events.write_all(b"\n")?;
        }
        events.flush()?;
        let e = self.config.eval_every;
        if e > 0 && self.episode > 0 && self.episode.is_multiple_of(e) && self.stage == Stage::Training {
            let stats = self.evaluate_q()?;
            self.evals.push(EvalRecord { episode: self.episode, mean: stats.mean, std: stats.std });
        }
        let mut evals = csv::Writer::from_path(dir.join("evals.csv")).map_err(|e| Error::Format(e.to_string()))?;
        if self.evals.is_empty() {
            evals.write_record(["episode", "mean", "std"]).map_err(|e| Error::Format(e.to_string()))?;
        }
        for r in &self.evals {
            evals.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
        }
        evals.flush()?;
        self.checkpoint(&dir.join("checkpoint"))
    }

    /// Writes everything needed to continue the run bit-for-bit.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let snapshot = Snapshot {
            format: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            stage: self.stage,
            episode: self.episode,
            global_step: self.global_step,
            fnn_version: self.fnn_version,
            feedback_counter: self.feedback.new_since_update(),
            replay: self.replay.clone(),
            reviewed: self.reviewed.clone(),
            rngs: self.rngs.capture(),
            oracle_rng: self.oracle.as_ref().map(Oracle::rng_state),
            metrics: self.metrics.clone(),
            events: self.events.clone(),
            evals: self.evals.clone(),
            frozen: self.frozen.clone(),
        };
        let tmp = dir.join("state.json.tmp");
        serde_json::to_writer(BufWriter::new(File::create(&tmp)?), &snapshot)?;
        let mut q = BufWriter::new(File::create(dir.join("q.bin"))?);
        self.q.write(&mut q)?;
        q.flush()?;
        if let Some(fnn) = &self.fnn {
            let mut f = BufWriter::new(File::create(dir.join("fnn.bin"))?);
            fnn.write(&mut f)?;
            f.flush()?;
        }
        let mut fb = BufWriter::new(File::create(dir.join("feedback.jsonl"))?);
        self.feedback.write_jsonl(&mut fb)?;
        fb.flush()?;
        fs::rename(tmp, dir.join("state.json"))?;
        Ok(())
    }

    /// Rebuilds a trainer from `checkpoint`.
    pub fn resume(dir: &Path) -> Result<Self> {
        let snapshot: Snapshot = serde_json::from_reader(BufReader::new(File::open(dir.join("state.json"))?))?;
        if snapshot.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {}", snapshot.format)));
        }
        let mut trainer = Trainer::new(snapshot.config)?;
        trainer.q = QNetworkPair::read(&mut BufReader::new(File::open(dir.join("q.bin"))?))?;
        if trainer.fnn.is_some() {
            trainer.fnn = Some(EnsembleFnn::read(&mut BufReader::new(File::open(dir.join("fnn.bin"))?))?);
        }
        let mut feedback = FeedbackBuffer::read_jsonl(BufReader::new(File::open(dir.join("feedback.jsonl"))?))?;
        feedback.set_counter(snapshot.feedback_counter);
        trainer.feedback = feedback;
        if let (Some(oracle), Some(state)) = (trainer.oracle.as_mut(), snapshot.oracle_rng.as_ref()) {
            oracle.restore_rng(state)?;
        }
        trainer.stage = snapshot.stage;
        trainer.episode = snapshot.episode;
        trainer.global_step = snapshot.global_step;
        trainer.fnn_version = snapshot.fnn_version;
        trainer.replay = snapshot.replay;
        trainer.reviewed = snapshot.reviewed;
        trainer.rngs = Streams::restore(&snapshot.rngs)?;
        trainer.metrics = snapshot.metrics;
        trainer.events = snapshot.events;
        trainer.evals = snapshot.evals;
        trainer.frozen = snapshot.frozen;
        Ok(trainer)
    }
}
