//! The two-phase protocol, seeded repetitions and batch aggregation.
//!
//! Each repetition owns a ChaCha stream keyed on `(master_seed, rep_index)` and
//! draws everything from it in a fixed order: reward function once, then per
//! episode pair, roles, state, signal and action. Batches run repetitions in
//! parallel and merge them by index, so output does not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::{Agent, AgentId};
use crate::config::{ExperimentConfig, Intervention};
use crate::env::{sample_reward_function, RewardMatrix};
use crate::error::{Error, Result};
use crate::game::{pair_mut, play_episode, EpisodeRecord, PairingPolicy};
use crate::metrics::{
    alignment_with, classify_run, group_alignment_with, histogram, mean_vocabulary, Metric, MetricsCheckpoint,
    PopulationSnapshot, RunLabel, WindowAccumulator, WindowSample, WINDOW,
};
use crate::scalar::Scalar;

pub const HISTOGRAM_BINS: usize = 10;

/// The random stream for one repetition.
pub fn repetition_rng(master_seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(rep_index);
    rng
}

/// An episode record tagged with its phase (1 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry<T: Scalar = f64> {
    pub phase: u8,
    pub record: EpisodeRecord<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    pub checkpoints: Vec<MetricsCheckpoint>,
    pub label: RunLabel,
}

impl PhaseTrace {
    pub fn end(&self) -> &MetricsCheckpoint {
        self.checkpoints.last().expect("phase end is always a checkpoint")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<T: Scalar = f64> {
    pub rep_index: usize,
    pub reward_tag: String,
    pub phases: [PhaseTrace; 2],
    /// Within-group alignment over the last phase-1 window, averaged over
    /// groups of two or more; `None` without groups.
    pub phase1_group_alignment: Option<f64>,
    pub trace: Option<Vec<TraceEntry<T>>>,
}

struct PhaseRunner<'a, T: Scalar> {
    config: &'a ExperimentConfig,
    env: &'a RewardMatrix<T>,
    rng: &'a mut ChaCha8Rng,
    agents: &'a mut Vec<Agent<T>>,
    window: &'a mut WindowAccumulator,
    global: &'a mut u64,
    trace: &'a mut Option<Vec<TraceEntry<T>>>,
}

struct PhaseOutcome {
    trace: PhaseTrace,
    /// Mean within-group alignment over the final window, for grouped pairings.
    group_alignment: Option<f64>,
}

impl<T: Scalar> PhaseRunner<'_, T> {
    fn run(&mut self, phase: u8, episodes: u64, pairing: &PairingPolicy) -> Result<PhaseOutcome> {
        let checkpoints = self.config.phase_checkpoints(episodes);
        let ties = self.config.metrics.alignment_ties;
        let singles = self.config.metrics.single_holders;
        let groups: Vec<&[AgentId]> =
            pairing.groups().unwrap_or_default().iter().filter(|g| g.len() >= 2).map(Vec::as_slice).collect();
        let mut group_sum = 0.0;
        let mut group_n = 0usize;
        let mut out = Vec::with_capacity(checkpoints.len());
        let mut next_cp = 0;
        for i in 0..episodes {
            let eps = self.config.epsilon.at(i, *self.global);
            let (s, r) = pairing.select_pair_and_roles(self.rng);
            let (sender, receiver) = pair_mut(self.agents, s, r);
            let rec = play_episode(self.env, sender, receiver, eps, self.rng, *self.global)?;
            *self.global += 1;
            let local = i + 1;
            let cp = checkpoints[next_cp];
            // alignment is only needed inside a reporting window
            let snapshot = (local + WINDOW as u64 > cp).then(|| PopulationSnapshot::capture(self.agents, ties));
            let measured = snapshot.as_ref().map(|p| alignment_with(p, singles)).transpose()?;
            if let Some(snap) = snapshot.as_ref().filter(|_| !groups.is_empty() && local + WINDOW as u64 > episodes) {
                for g in &groups {
                    group_sum += group_alignment_with(snap, g, singles)?;
                }
                group_n += groups.len();
            }
            self.window.push(WindowSample::from_record(&rec, measured));
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceEntry { phase, record: rec });
            }
            if local == cp {
                let snapshot = PopulationSnapshot::capture(self.agents, ties);
                let checkpoint = MetricsCheckpoint {
                    episode: *self.global,
                    reward: self.window.windowed_reward()?,
                    vocabulary: mean_vocabulary(&snapshot),
                    alignment: self.window.mean_alignment().expect("window measured"),
                    intent_met: self.window.intent_met_ratio()?,
                    suc_mis: self.window.successful_misunderstanding_ratio()?,
                };
                check_checkpoint(&checkpoint, self.window)?;
                out.push(checkpoint);
                next_cp += 1;
                if next_cp == checkpoints.len() {
                    debug_assert_eq!(local, episodes);
                    next_cp -= 1;
                }
            }
        }
        let label = classify_run(out.last().expect("phase end checkpoint"));
        Ok(PhaseOutcome {
            trace: PhaseTrace { checkpoints: out, label },
            group_alignment: (group_n > 0).then(|| group_sum / group_n as f64),
        })
    }
}

fn check_checkpoint(cp: &MetricsCheckpoint, window: &WindowAccumulator) -> Result<()> {
    for (name, v) in [("alignment", cp.alignment), ("intent_met", cp.intent_met), ("suc_mis", cp.suc_mis)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invariant(format!("{name} = {v} outside [0, 1] at episode {}", cp.episode)));
        }
    }
    if cp.suc_mis > window.positive_reward_ratio()? {
        return Err(Error::Invariant(format!("suc_mis exceeds positive-reward ratio at episode {}", cp.episode)));
    }
    Ok(())
}

/// Runs one repetition of the two-phase protocol. With `keep_trace`, every
/// episode record is retained.
pub fn run_repetition<T: Scalar>(config: &ExperimentConfig, rep_index: usize, keep_trace: bool) -> Result<RunTrace<T>> {
    let family = config.environment.family::<T>()?;
    let mut rng = repetition_rng(config.master_seed, rep_index as u64);
    let env = sample_reward_function(&mut rng, &family).clone();
    let (ns, na) = (env.num_states(), env.num_actions());
    let mut agents: Vec<Agent<T>> =
        config.phase1_population().into_iter().map(|id| Agent::new(id, ns, na, config.agent)).collect();
    let mut window = WindowAccumulator::new(WINDOW);
    let mut global = 0u64;
    let mut trace = keep_trace.then(Vec::new);

    let phase1_pairing = config.phase1_pairing()?;
    let phase1 = PhaseRunner {
        config,
        env: &env,
        rng: &mut rng,
        agents: &mut agents,
        window: &mut window,
        global: &mut global,
        trace: &mut trace,
    }
    .run(1, config.phase1.episodes, &phase1_pairing)?;

    if config.intervention == Intervention::PopulationIncrease {
        let id = AgentId(agents.len() as u32);
        agents.push(Agent::new(id, ns, na, config.agent));
    }
    let phase2_pairing = config.phase2_pairing()?;
    let phase2 = PhaseRunner {
        config,
        env: &env,
        rng: &mut rng,
        agents: &mut agents,
        window: &mut window,
        global: &mut global,
        trace: &mut trace,
    }
    .run(2, config.phase2.episodes, &phase2_pairing)?;

    Ok(RunTrace {
        rep_index,
        reward_tag: env.tag().to_string(),
        phase1_group_alignment: phase1.group_alignment,
        phases: [phase1.trace, phase2.trace],
        trace,
    })
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub phase: u8,
    pub episode: u64,
    pub mean: MetricsCheckpoint,
    pub sd: MetricsCheckpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramRow {
    pub phase: u8,
    pub metric: Metric,
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
}

/// 3x3 counts of phase-1 label (rows) against phase-2 label (columns), in
/// [`RunLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Crosstab {
    pub counts: [[usize; 3]; 3],
}

impl Crosstab {
    pub fn get(&self, phase1: RunLabel, phase2: RunLabel) -> usize {
        self.counts[label_index(phase1)][label_index(phase2)]
    }

    pub fn row_total(&self, phase1: RunLabel) -> usize {
        self.counts[label_index(phase1)].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

fn label_index(label: RunLabel) -> usize {
    RunLabel::ALL.iter().position(|l| *l == label).expect("label listed")
}

pub fn persistence_crosstab(labels: impl IntoIterator<Item = (RunLabel, RunLabel)>) -> Crosstab {
    let mut tab = Crosstab::default();
    for (p1, p2) in labels {
        tab.counts[label_index(p1)][label_index(p2)] += 1;
    }
    tab
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub name: String,
    pub repetitions: usize,
    pub rows: Vec<AggregateRow>,
    pub histograms: Vec<HistogramRow>,
    /// Per phase, label counts in [`RunLabel::ALL`] order.
    pub label_counts: [[usize; 3]; 2],
    pub crosstab: Crosstab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T: Scalar = f64> {
    pub config: ExperimentConfig,
    pub runs: Vec<RunTrace<T>>,
    pub summary: BatchSummary,
}

/// Metrics with phase-end histograms.
pub const HISTOGRAM_METRICS: [Metric; 3] = [Metric::Reward, Metric::IntentMet, Metric::SucMis];

/// Builds the summary from per-run phase-end values; shared by batch runs and
/// by reports recomputed from a runs file.
pub fn phase_end_histograms(phase_ends: &[[MetricsCheckpoint; 2]]) -> Result<Vec<HistogramRow>> {
    let rewards = reward_range(phase_ends.iter().flat_map(|p| [p[0].reward, p[1].reward]));
    let mut rows = Vec::new();
    for phase in 0..2 {
        for metric in HISTOGRAM_METRICS {
            let (lo, hi) = if metric == Metric::Reward { rewards } else { metric.range() };
            let values: Vec<f64> = phase_ends.iter().map(|p| p[phase].get(metric)).collect();
            let counts = histogram(&values, lo, hi, HISTOGRAM_BINS)?;
            let width = (hi - lo) / HISTOGRAM_BINS as f64;
            for (i, count) in counts.into_iter().enumerate() {
                rows.push(HistogramRow {
                    phase: phase as u8 + 1,
                    metric,
                    bin_low: lo + width * i as f64,
                    bin_high: if i + 1 == HISTOGRAM_BINS { hi } else { lo + width * (i + 1) as f64 },
                    count,
                });
            }
        }
    }
    Ok(rows)
}

fn summarize<T: Scalar>(config: &ExperimentConfig, runs: &[RunTrace<T>]) -> Result<BatchSummary> {
    let mut rows = Vec::new();
    for phase in 0..2 {
        let n_cps = runs[0].phases[phase].checkpoints.len();
        for k in 0..n_cps {
            let cps: Vec<&MetricsCheckpoint> = runs.iter().map(|r| &r.phases[phase].checkpoints[k]).collect();
            let episode = cps[0].episode;
            let stat = |metric: Metric| mean_sd(&cps.iter().map(|c| c.get(metric)).collect::<Vec<_>>());
            let (reward, reward_sd) = stat(Metric::Reward);
            let (vocabulary, vocabulary_sd) = stat(Metric::Vocabulary);
            let (align, align_sd) = stat(Metric::Alignment);
            let (intent_met, intent_sd) = stat(Metric::IntentMet);
            let (suc_mis, suc_mis_sd) = stat(Metric::SucMis);
            rows.push(AggregateRow {
                phase: phase as u8 + 1,
                episode,
                mean: MetricsCheckpoint { episode, reward, vocabulary, alignment: align, intent_met, suc_mis },
                sd: MetricsCheckpoint {
                    episode,
                    reward: reward_sd,
                    vocabulary: vocabulary_sd,
                    alignment: align_sd,
                    intent_met: intent_sd,
                    suc_mis: suc_mis_sd,
                },
            });
        }
    }
    let phase_ends: Vec<[MetricsCheckpoint; 2]> =
        runs.iter().map(|r| [*r.phases[0].end(), *r.phases[1].end()]).collect();
    let histograms = phase_end_histograms(&phase_ends)?;
    let mut label_counts = [[0usize; 3]; 2];
    for run in runs {
        for phase in 0..2 {
            label_counts[phase][label_index(run.phases[phase].label)] += 1;
        }
    }
    let crosstab = persistence_crosstab(runs.iter().map(|r| (r.phases[0].label, r.phases[1].label)));
    Ok(BatchSummary { name: config.name.clone(), repetitions: runs.len(), rows, histograms, label_counts, crosstab })
}

/// Range of the reward histogram: `[-1, 1]`, widened to whole numbers when
/// an asymmetric family pushes window means outside it. Derived from the
/// values alone so that reports rebuilt from a runs file agree with the batch.
pub fn reward_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values.into_iter().fold((-1.0, 1.0), |(lo, hi), v| (f64::min(lo, v.floor()), f64::max(hi, v.ceil())))
}

/// Runs every repetition on `workers` threads (0 = all available cores).
/// `trace_rep` keeps the full episode trace of one repetition.
pub fn run_batch<T: Scalar>(config: &ExperimentConfig, workers: usize, trace_rep: Option<usize>) -> Result<Batch<T>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunTrace<T>> = pool.install(|| {
        (0..config.repetitions)
            .into_par_iter()
            .map(|rep| run_repetition::<T>(config, rep, trace_rep == Some(rep)))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(config, &runs)?;
    Ok(Batch { config: config.clone(), runs, summary })
}
