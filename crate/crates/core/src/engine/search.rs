use serde::{Deserialize, Serialize};

use super::optim::{poly_lr, Adam, AdamConfig};
use super::{discretize, DiscreteArchitecture};
use crate::adcore::{Tape, Tensor, Var};
use crate::archspace::{
    build_supernet, supernet_forward, ArchParams, GroupOwner, Level, MixtureWeights, ParamOwner,
    SpaceConfig, SuperNet,
};
use crate::bench::{Dataset, Split};
use crate::costmodel::{
    expected_flops_on_tape, expected_total_flops, flops_constraint_on_tape, CostSpec,
};
use crate::regloss::{entropy, normalize_probs, LevelWeights, Regularizer};
use crate::rng::SeededRng;
use crate::shrink::{hierarchical_shrink_step, ShrinkEvent};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Leading epochs that update weights only.
    pub warmup_epochs: usize,
    pub arch_optimizer: AdamConfig,
    pub weight_optimizer: AdamConfig,
    /// Power of the polynomial decay applied to the weight learning rate.
    pub poly_power: f64,
    pub level_weights: LevelWeights,
    /// Shrinking threshold on the retaining probability.
    pub h: f64,
    pub cost: Option<CostSpec>,
    pub regularizer: Regularizer,
    /// Multiplier of the entropy regularizer; `1` minimizes entropy.
    pub ie_sign: f64,
    pub shrink: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epochs: 200,
            batch_size: 16,
            warmup_epochs: 0,
            arch_optimizer: AdamConfig::new(0.002, 0.001),
            weight_optimizer: AdamConfig::new(0.0003, 0.0001),
            poly_power: 0.9,
            level_weights: LevelWeights::default(),
            h: 0.1,
            cost: None,
            regularizer: Regularizer::Ssr,
            ie_sign: 1.0,
            shrink: true,
            seed: 0,
        }
    }
}

impl SearchConfig {
    /// Settings for the small synthetic task: larger learning rates and a
    /// short weight-only warmup.
    pub fn toy() -> Self {
        SearchConfig {
            epochs: 200,
            batch_size: 16,
            warmup_epochs: 10,
            arch_optimizer: AdamConfig::new(0.03, 0.001),
            weight_optimizer: AdamConfig::new(0.01, 0.0001),
            ..Self::default()
        }
    }

    /// No sharpening term and no shrinking.
    pub fn plain(self) -> Self {
        SearchConfig {
            regularizer: Regularizer::None,
            shrink: false,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("search.batch_size", "must be > 0"));
        }
        self.arch_optimizer.validate("search.arch_optimizer")?;
        self.weight_optimizer.validate("search.weight_optimizer")?;
        if !(self.h > 0.0 && self.h < 1.0) {
            return Err(Error::config("search.h", "h must be in (0,1)"));
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            return Err(Error::config(
                "search.poly_power",
                "must be finite and >= 0",
            ));
        }
        if !self.ie_sign.is_finite() {
            return Err(Error::config("search.ie_sign", "must be finite"));
        }
        self.level_weights.validate()?;
        if let Some(c) = &self.cost {
            c.validate()?;
        }
        Ok(())
    }
}

/// Everything that evolves during a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub net: SuperNet,
    pub arch: ArchParams,
    /// One slot per architecture group.
    pub arch_opt: Adam,
    /// One slot per supernet parameter tensor.
    pub weight_opt: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed weight steps.
    pub step: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelEntropy {
    pub depth: f64,
    pub dilation_spatial: f64,
    pub channel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub index: usize,
    pub level: Level,
    pub owner: GroupOwner,
    /// Active candidate ids.
    pub ids: Vec<usize>,
    pub probs: Vec<f64>,
}

/// State at the end of an epoch (epoch 0 is the initial state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub epoch: usize,
    /// Non-frozen groups after this epoch's shrinking.
    pub groups: Vec<GroupRecord>,
    pub level_entropy: LevelEntropy,
    pub total_entropy: f64,
    /// Mean validation cross-entropy over the epoch's architecture steps.
    pub task_loss: Option<f64>,
    /// Mean weighted regularizer over the epoch's architecture steps.
    pub reg_loss: Option<f64>,
    /// Mean FLOPs constraint loss over the epoch's architecture steps.
    pub flops_loss: Option<f64>,
    /// Mean training cross-entropy over the epoch's weight steps.
    pub train_loss: Option<f64>,
    pub expected_flops: f64,
    pub active_candidates: usize,
    pub shrink_events: Vec<ShrinkEvent>,
}

impl TrajectoryRecord {
    /// Entropy summed from the stored probability vectors.
    pub fn recomputed_entropy(&self) -> f64 {
        self.groups.iter().map(|g| entropy(&g.probs)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// Validation loss with the relaxed mixture.
    pub soft_loss: f64,
    /// Validation loss with every group set to its argmax.
    pub hard_loss: f64,
    /// `hard_loss - soft_loss`.
    pub gap: f64,
}

#[derive(Clone, Debug, Default)]
struct StepStats {
    task: f64,
    reg: f64,
    flops: f64,
    train: f64,
    arch_steps: usize,
    weight_steps: usize,
}

/// Dense probability vectors of all groups; zeros for frozen groups and
/// inactive candidates.
pub fn dense_probs(arch: &ArchParams) -> Result<Vec<Vec<f64>>> {
    arch.groups
        .iter()
        .map(|g| {
            if g.frozen {
                Ok(vec![0.0; g.len()])
            } else {
                Ok(normalize_probs(g)?.dense(g.len()))
            }
        })
        .collect()
}

fn mean_loss(net: &SuperNet, arch: &ArchParams, probs: &[Vec<f64>], split: &Split) -> Result<f64> {
    let idx: Vec<usize> = (0..split.n).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(32) {
        let (x, y) = split.batch(chunk);
        let mut tape = Tape::new();
        let params = net.attach_constants(&mut tape);
        let mix = MixtureWeights::fixed(&mut tape, arch, probs);
        let xb = tape.constant(x);
        let logits = supernet_forward(&mut tape, net, arch, &mix, &params, xb)?;
        let ce = tape.cross_entropy(logits, y)?;
        total += tape.value(ce).item() * chunk.len() as f64;
    }
    Ok(total / split.n as f64)
}

/// Validation loss at fixed weights with the relaxed probabilities and with
/// the argmax architecture, and their signed difference.
pub fn discretization_gap(net: &SuperNet, arch: &ArchParams, split: &Split) -> Result<GapReport> {
    let soft_loss = mean_loss(net, arch, &dense_probs(arch)?, split)?;
    let hard = discretize(arch, &net.config)?.to_arch_params(&net.config)?;
    let hard_loss = mean_loss(net, &hard, &dense_probs(&hard)?, split)?;
    Ok(GapReport {
        soft_loss,
        hard_loss,
        gap: hard_loss - soft_loss,
    })
}

/// Nodes of the architecture objective.
#[derive(Clone, Copy, Debug)]
pub struct ArchTerms {
    pub total: Var,
    pub task: Var,
    pub reg: Option<Var>,
    pub flops: Option<Var>,
    pub expected_flops: Var,
}

/// Builds `task + Σ ρ·penalty + flops` on `tape` with the supernet weights
/// as constants and `logits` (full-length, one per open group) as the only
/// differentiable inputs.
pub fn arch_objective(
    tape: &mut Tape,
    net: &SuperNet,
    arch: &ArchParams,
    config: &SearchConfig,
    logits: &[Option<Var>],
    x: Tensor,
    y: Vec<usize>,
) -> Result<ArchTerms> {
    let params = net.attach_constants(tape);
    let mix = MixtureWeights::relaxed_with(tape, arch, logits)?;
    let xb = tape.constant(x);
    let out = supernet_forward(tape, net, arch, &mix, &params, xb)?;
    let task = tape.cross_entropy(out, y)?;
    let mut terms = vec![task];
    let mut reg_terms: Vec<Var> = Vec::new();
    if config.regularizer != Regularizer::None {
        for (g, m) in arch.groups.iter().zip(&mix.groups) {
            let rho = config.level_weights.get(g.level);
            let Some(p) = m.probs else { continue };
            if rho == 0.0 {
                continue;
            }
            if let Some(pen) = config
                .regularizer
                .penalty_on_tape(tape, p, config.ie_sign)?
            {
                reg_terms.push(tape.scale(pen, rho)?);
            }
        }
    }
    let reg = if reg_terms.is_empty() {
        None
    } else {
        Some(tape.add_all(&reg_terms)?)
    };
    terms.extend(reg);
    let expected_flops = expected_flops_on_tape(tape, &net.config, arch, &mix)?;
    let flops = match &config.cost {
        Some(spec) => flops_constraint_on_tape(tape, expected_flops, spec)?,
        None => None,
    };
    terms.extend(flops);
    let total = tape.add_all(&terms)?;
    Ok(ArchTerms {
        total,
        task,
        reg,
        flops,
        expected_flops,
    })
}

/// A bi-level search in progress: the architecture is updated on one half
/// of the training pool, the weights on the other.
pub struct Search {
    pub space: SpaceConfig,
    pub config: SearchConfig,
    pub state: SearchState,
    pub train: Split,
    pub val: Split,
}

fn check_compatible(space: &SpaceConfig, data: &Dataset) -> Result<()> {
    let t = &data.config;
    if space.length != t.length || space.in_channels != t.in_channels || space.classes != t.classes
    {
        return Err(Error::config(
            "space",
            format!(
                "length/in_channels/classes {}/{}/{} do not match the task's {}/{}/{}",
                space.length, space.in_channels, space.classes, t.length, t.in_channels, t.classes
            ),
        ));
    }
    Ok(())
}

impl Search {
    pub fn new(space: &SpaceConfig, config: &SearchConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        check_compatible(space, data)?;
        let (net, arch) = build_supernet(space, config.seed)?;
        let state = SearchState {
            arch_opt: Adam::new(config.arch_optimizer, arch.groups.iter().map(|g| g.len())),
            weight_opt: Adam::new(config.weight_optimizer, net.params.iter().map(|p| p.len())),
            net,
            arch,
            epoch: 0,
            step: 0,
        };
        Self::from_state(space, config, data, state)
    }

    /// Resumes from a saved state.
    pub fn from_state(
        space: &SpaceConfig,
        config: &SearchConfig,
        data: &Dataset,
        state: SearchState,
    ) -> Result<Self> {
        config.validate()?;
        check_compatible(space, data)?;
        let (train, val) = data.train.halves();
        Ok(Search {
            space: space.clone(),
            config: config.clone(),
            state,
            train,
            val,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.n.div_ceil(self.config.batch_size)
    }

    pub fn is_discrete(&self) -> bool {
        self.state.arch.is_discrete()
    }

    fn arch_step(&mut self, idx: &[usize], stats: &mut StepStats) -> Result<()> {
        let (x, y) = self.val.batch(idx);
        let st = &mut self.state;
        let mut tape = Tape::new();
        let leaves: Vec<Option<Var>> = st
            .arch
            .groups
            .iter()
            .map(|g| {
                g.is_open()
                    .then(|| tape.leaf(Tensor::vector(g.logits.clone())))
            })
            .collect();
        let terms = arch_objective(&mut tape, &st.net, &st.arch, &self.config, &leaves, x, y)?;
        let total = tape.value(terms.total).item();
        if !total.is_finite() {
            return Err(Error::NonFinite {
                what: "architecture loss",
                epoch: st.epoch + 1,
                step: st.step,
            });
        }
        tape.backward(terms.total)?;
        let lr = self.config.arch_optimizer.lr;
        for (i, leaf) in leaves.iter().enumerate() {
            let Some(leaf) = leaf else { continue };
            let Some(g) = tape.grad(*leaf) else { continue };
            let g = g.to_vec();
            let group = &mut st.arch.groups[i];
            let mask = group.active.clone();
            st.arch_opt.step(i, &mut group.logits, &g, lr, Some(&mask));
        }
        stats.task += tape.value(terms.task).item();
        stats.reg += terms.reg.map_or(0.0, |v| tape.value(v).item());
        stats.flops += terms.flops.map_or(0.0, |v| tape.value(v).item());
        stats.arch_steps += 1;
        Ok(())
    }

    fn weight_step(
        &mut self,
        idx: &[usize],
        total_steps: usize,
        stats: &mut StepStats,
    ) -> Result<()> {
        let (x, y) = self.train.batch(idx);
        let st = &mut self.state;
        let probs = dense_probs(&st.arch)?;
        let mut tape = Tape::new();
        let params = st.net.attach(&mut tape);
        let mix = MixtureWeights::fixed(&mut tape, &st.arch, &probs);
        let xb = tape.constant(x);
        let logits = supernet_forward(&mut tape, &st.net, &st.arch, &mix, &params, xb)?;
        let ce = tape.cross_entropy(logits, y)?;
        let loss = tape.value(ce).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "weight loss",
                epoch: st.epoch + 1,
                step: st.step,
            });
        }
        tape.backward(ce)?;
        let lr = poly_lr(
            self.config.weight_optimizer.lr,
            st.step,
            total_steps,
            self.config.poly_power,
        );
        for (i, &v) in params.iter().enumerate() {
            if let Some(g) = tape.grad(v) {
                st.weight_opt
                    .step(i, st.net.params[i].values_mut(), g, lr, None);
            }
        }
        st.step += 1;
        stats.train += loss;
        stats.weight_steps += 1;
        Ok(())
    }

    /// One alternation: architecture update on `val_idx` (skipped during
    /// warmup), then weight update on `train_idx`.
    pub fn search_step(&mut self, train_idx: &[usize], val_idx: &[usize]) -> Result<()> {
        let mut stats = StepStats::default();
        self.step_with(train_idx, val_idx, &mut stats)
    }

    fn step_with(
        &mut self,
        train_idx: &[usize],
        val_idx: &[usize],
        stats: &mut StepStats,
    ) -> Result<()> {
        if self.state.epoch >= self.config.warmup_epochs {
            self.arch_step(val_idx, stats)?;
        }
        let total = self.config.epochs * self.steps_per_epoch();
        self.weight_step(train_idx, total, stats)
    }

    /// Drops optimizer state belonging to pruned structure.
    fn reset_pruned(&mut self, events: &[ShrinkEvent]) {
        let st = &mut self.state;
        for ev in events {
            let gid = st
                .arch
                .groups
                .iter()
                .position(|g| g.owner == ev.owner)
                .expect("event owner exists");
            for &c in &ev.removed {
                st.arch_opt.reset(gid, c);
            }
            let mut dead_ops: Vec<(usize, usize, usize)> = Vec::new();
            if let GroupOwner::Layer { stage, layer } = ev.owner {
                dead_ops.extend(ev.removed.iter().map(|&op| (stage, layer, op)));
            }
            for owner in &ev.cascaded {
                if let GroupOwner::Layer { stage, layer } = *owner {
                    dead_ops.extend((0..self.space.ops_per_layer()).map(|op| (stage, layer, op)));
                }
            }
            for (i, po) in st.net.owners.iter().enumerate() {
                if let ParamOwner::Op { stage, layer, op } = *po {
                    if dead_ops.contains(&(stage, layer, op)) {
                        for j in 0..st.net.params[i].len() {
                            st.weight_opt.reset(i, j);
                        }
                    }
                }
            }
        }
    }

    /// Snapshot of the current architecture distribution.
    pub fn record(&self, events: Vec<ShrinkEvent>) -> Result<TrajectoryRecord> {
        let mut groups = Vec::new();
        let mut level = LevelEntropy::default();
        for (index, g) in self
            .state
            .arch
            .groups
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.frozen)
        {
            let p = normalize_probs(g)?;
            let e = entropy(&p.p);
            match g.level {
                Level::Depth => level.depth += e,
                Level::DilationSpatial => level.dilation_spatial += e,
                Level::Channel => level.channel += e,
            }
            groups.push(GroupRecord {
                index,
                level: g.level,
                owner: g.owner,
                ids: p.ids,
                probs: p.p,
            });
        }
        let total_entropy = groups.iter().map(|g| entropy(&g.probs)).sum();
        Ok(TrajectoryRecord {
            epoch: self.state.epoch,
            groups,
            level_entropy: level,
            total_entropy,
            task_loss: None,
            reg_loss: None,
            flops_loss: None,
            train_loss: None,
            expected_flops: expected_total_flops(&self.space, &self.state.arch)?,
            active_candidates: self.state.arch.active_count(),
            shrink_events: events,
        })
    }

    /// One epoch of alternating steps, then shrinking if enabled.
    pub fn run_epoch(&mut self) -> Result<TrajectoryRecord> {
        let epoch = self.state.epoch + 1;
        let mut rng = SeededRng::derive(self.config.seed, 0x5EA4_C000 + epoch as u64);
        let train_batches = self.train.epoch_batches(self.config.batch_size, &mut rng);
        let val_batches = self.val.epoch_batches(self.config.batch_size, &mut rng);
        let mut stats = StepStats::default();
        for (i, tb) in train_batches.iter().enumerate() {
            let vb = &val_batches[i % val_batches.len()];
            self.step_with(tb, vb, &mut stats)?;
        }
        self.state.epoch = epoch;
        let events = if self.config.shrink {
            hierarchical_shrink_step(&mut self.state.arch, &self.space, self.config.h, epoch)
        } else {
            Vec::new()
        };
        self.reset_pruned(&events);
        let mut rec = self.record(events)?;
        let mean = |v: f64, n: usize| (n > 0).then(|| v / n as f64);
        rec.task_loss = mean(stats.task, stats.arch_steps);
        rec.reg_loss = mean(stats.reg, stats.arch_steps);
        rec.flops_loss = mean(stats.flops, stats.arch_steps);
        rec.train_loss = mean(stats.train, stats.weight_steps);
        Ok(rec)
    }

    pub fn gap(&self) -> Result<GapReport> {
        discretization_gap(&self.state.net, &self.state.arch, &self.val)
    }

    pub fn discretize(&self) -> Result<DiscreteArchitecture> {
        discretize(&self.state.arch, &self.space)
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub arch: DiscreteArchitecture,
    pub trajectory: Vec<TrajectoryRecord>,
    pub gap: GapReport,
    /// Every non-frozen group ended with a single candidate.
    pub converged: bool,
    /// First epoch whose record has zero total entropy.
    pub converged_epoch: Option<usize>,
    pub state: SearchState,
}

/// Runs epochs until the architecture is discrete or the budget is spent,
/// then discretizes and measures the gap.
pub fn run_search(
    space: &SpaceConfig,
    config: &SearchConfig,
    data: &Dataset,
) -> Result<SearchOutcome> {
    run_search_with(space, config, data, |_| Ok(()))
}

/// [`run_search`] with a callback on every record as it is produced.
pub fn run_search_with(
    space: &SpaceConfig,
    config: &SearchConfig,
    data: &Dataset,
    mut on_record: impl FnMut(&TrajectoryRecord) -> Result<()>,
) -> Result<SearchOutcome> {
    let mut search = Search::new(space, config, data)?;
    let first = search.record(Vec::new())?;
    on_record(&first)?;
    let mut trajectory = vec![first];
    while search.state.epoch < config.epochs && !search.is_discrete() {
        let rec = search.run_epoch()?;
        on_record(&rec)?;
        trajectory.push(rec);
    }
    finish(search, trajectory)
}

pub(crate) fn finish(search: Search, trajectory: Vec<TrajectoryRecord>) -> Result<SearchOutcome> {
    let arch = search.discretize()?;
    let gap = search.gap()?;
    let converged = search.is_discrete();
    let converged_epoch = trajectory
        .iter()
        .find(|r| r.total_entropy == 0.0)
        .map(|r| r.epoch);
    Ok(SearchOutcome {
        arch,
        trajectory,
        gap,
        converged,
        converged_epoch,
        state: search.state,
    })
}
