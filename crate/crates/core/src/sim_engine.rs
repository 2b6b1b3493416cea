//! Discrete-step business-process engine.
//!
//! Each call to [`Engine::step`] runs four phases in a fixed order:
//!
//! 1. arrival of at most one new case (Bernoulli trial, process chosen by
//!    relative frequency, suppressed when the enabled set is over its
//!    duration cap);
//! 2. at most one allocation of a free, eligible resource to the oldest
//!    enabled instance of the requested task;
//! 3. countdown of every executing instance, releasing resources and
//!    sampling successors for the ones that finish;
//! 4. encoding of the resulting state and the reward earned in the step.
//!
//! Arrivals draw from their own RNG stream, so two engines with the same
//! seed see the same arrival draws regardless of how they allocate.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process_model::{
    sample_duration, sample_next_task, validate_suite, BusinessProcessSuite, NextTask, ProcessId,
    ResourceId, Task, TaskId,
};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("suite failed validation:\n{0}")]
    InvalidSuite(String),
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("action index {index} out of range 0..={max}")]
    ActionIndexOutOfRange { index: usize, max: usize },
    #[error("action refers to {0}, which is not part of the suite")]
    UnknownResource(ResourceId),
    #[error("action refers to {0}, which is not part of the suite")]
    UnknownTask(TaskId),
    #[error("unknown state encoding {0:?} (expected std, a1, a10 or a2)")]
    UnknownEncoding(String),
}

/// Observation layout handed to the agent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    /// |R| x |T| matrix: 1 allocated, 0 eligible and enabled, -1 otherwise.
    Std,
    /// Allocated task per resource, then enabled-instance counts per task.
    A1,
    /// As `A1` with counts normalized to shares of the enabled set.
    #[default]
    A10,
    /// `A1` followed by the +1/-1 eligibility matrix.
    A2,
}

impl Encoding {
    pub const ALL: [Encoding; 4] = [Encoding::Std, Encoding::A1, Encoding::A10, Encoding::A2];

    pub fn width(self, resources: usize, tasks: usize) -> usize {
        match self {
            Encoding::Std => resources * tasks,
            Encoding::A1 | Encoding::A10 => resources + tasks,
            Encoding::A2 => resources + tasks + resources * tasks,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Std => "std",
            Encoding::A1 => "a1",
            Encoding::A10 => "a10",
            Encoding::A2 => "a2",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Encoding {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "std" => Ok(Encoding::Std),
            "a1" => Ok(Encoding::A1),
            "a10" => Ok(Encoding::A10),
            "a2" => Ok(Encoding::A2),
            other => Err(EngineError::UnknownEncoding(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub encoding: Encoding,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    NoOp,
    Assign { resource: ResourceId, task: TaskId },
}

/// Number of discrete actions: one per (resource, task) pair plus no-op.
pub fn action_count(resources: usize, tasks: usize) -> usize {
    resources * tasks + 1
}

/// Maps a flat index to an action. The last index is `NoOp`; the rest are
/// laid out row-major by resource: `index = k * |T| + i`.
pub fn decode_action(index: usize, resources: usize, tasks: usize) -> Result<Action, EngineError> {
    let noop = resources * tasks;
    if index > noop {
        return Err(EngineError::ActionIndexOutOfRange { index, max: noop });
    }
    if index == noop {
        return Ok(Action::NoOp);
    }
    Ok(Action::Assign {
        resource: ResourceId((index / tasks) as u32),
        task: TaskId((index % tasks) as u32),
    })
}

pub fn encode_action(action: Action, resources: usize, tasks: usize) -> usize {
    match action {
        Action::NoOp => resources * tasks,
        Action::Assign { resource, task } => resource.index() * tasks + task.index(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Probability of one case arrival per step.
    pub arrival_probability: f64,
    /// Upper bound on the summed mean durations of the enabled set, checked
    /// before admitting a new case.
    pub enabled_duration_cap: f64,
    pub encoding: Encoding,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            arrival_probability: 0.8,
            enabled_duration_cap: 400.0,
            encoding: Encoding::A10,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&self.arrival_probability) {
            return Err(EngineError::InvalidConfig(format!(
                "arrival probability {} outside [0, 1]",
                self.arrival_probability
            )));
        }
        if !(self.enabled_duration_cap.is_finite() && self.enabled_duration_cap > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "enabled duration cap {} must be positive",
                self.enabled_duration_cap
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseStatus {
    Running,
    Completed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusinessProcessCase {
    pub case_id: u64,
    pub process: ProcessId,
    pub current_task: TaskId,
    pub status: CaseStatus,
    pub arrival_step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Allocation {
    pub resource: ResourceId,
    pub remaining_steps: u32,
}

/// The single live work unit of a case. `allocation` is `None` while the
/// instance waits in the enabled set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskInstance {
    pub task: TaskId,
    pub case_id: u64,
    pub allocation: Option<Allocation>,
}

/// Dense eligibility lookup shared by the engine and the privileged view.
#[derive(Clone, Debug, PartialEq)]
pub struct EligibilityTable {
    resources: usize,
    tasks: usize,
    efficiency: Vec<Option<f64>>,
    by_task: Vec<Vec<ResourceId>>,
}

impl EligibilityTable {
    pub fn from_suite(suite: &BusinessProcessSuite) -> Self {
        Self::from_entries(
            suite.resource_count(),
            suite.task_count(),
            suite
                .eligibility
                .entries()
                .iter()
                .map(|e| (e.resource, e.task, e.efficiency)),
        )
    }

    /// Builds a table from explicit (resource, task, efficiency) triples.
    pub fn from_entries(
        resources: usize,
        tasks: usize,
        entries: impl IntoIterator<Item = (ResourceId, TaskId, f64)>,
    ) -> Self {
        let mut efficiency = vec![None; resources * tasks];
        for (k, i, e) in entries {
            efficiency[k.index() * tasks + i.index()] = Some(e);
        }
        let by_task = (0..tasks)
            .map(|i| {
                (0..resources)
                    .filter(|k| efficiency[k * tasks + i].is_some())
                    .map(|k| ResourceId(k as u32))
                    .collect()
            })
            .collect();
        Self {
            resources,
            tasks,
            efficiency,
            by_task,
        }
    }

    pub fn resources(&self) -> usize {
        self.resources
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn efficiency(&self, resource: ResourceId, task: TaskId) -> Option<f64> {
        if resource.index() >= self.resources || task.index() >= self.tasks {
            return None;
        }
        self.efficiency[resource.index() * self.tasks + task.index()]
    }

    pub fn is_eligible(&self, resource: ResourceId, task: TaskId) -> bool {
        self.efficiency(resource, task).is_some()
    }

    /// Eligible resources for `task`, ascending by id.
    pub fn eligible(&self, task: TaskId) -> &[ResourceId] {
        self.by_task.get(task.index()).map_or(&[], Vec::as_slice)
    }
}

/// One waiting instance as seen by a dispatch heuristic.
#[derive(Clone, Debug, PartialEq)]
pub struct EnabledEntry {
    pub task: TaskId,
    pub case_id: u64,
    pub arrival_step: u64,
    pub mean_duration: f64,
}

/// Read-only snapshot with the information heuristics need but the agent
/// does not get: arrival order and mean durations.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivilegedView {
    pub step: u64,
    pub enabled: Vec<EnabledEntry>,
    /// Ascending by id.
    pub free_resources: Vec<ResourceId>,
    pub eligibility: Arc<EligibilityTable>,
}

#[derive(Clone, Debug)]
pub struct EngineState {
    pub enabled: Vec<TaskInstance>,
    pub current: Vec<TaskInstance>,
    pub free_resources: BTreeSet<ResourceId>,
    /// Indexed by case id.
    pub cases: Vec<BusinessProcessCase>,
    pub step_count: u64,
    pub completed_reward_total: f64,
    pub completed_per_process: Vec<u64>,
    arrival_rng: ChaCha8Rng,
    service_rng: ChaCha8Rng,
}

impl EngineState {
    fn fresh(resources: usize, processes: usize, seed: u64) -> Self {
        let arrival_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut service_rng = ChaCha8Rng::seed_from_u64(seed);
        service_rng.set_stream(1);
        Self {
            enabled: Vec::new(),
            current: Vec::new(),
            free_resources: (0..resources as u32).map(ResourceId).collect(),
            cases: Vec::new(),
            step_count: 0,
            completed_reward_total: 0.0,
            completed_per_process: vec![0; processes],
            arrival_rng,
            service_rng,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Engine {
    suite: BusinessProcessSuite,
    config: EngineConfig,
    /// Task definitions indexed by task id.
    tasks: Vec<Task>,
    /// Position in `suite.processes` of each task's owner, indexed by task id.
    task_process: Vec<usize>,
    start_tasks: Vec<TaskId>,
    eligibility: Arc<EligibilityTable>,
    state: EngineState,
}

impl Engine {
    pub fn new(suite: BusinessProcessSuite, config: EngineConfig) -> Result<Self, EngineError> {
        let report = validate_suite(&suite);
        if !report.is_ok() {
            return Err(EngineError::InvalidSuite(report.to_string()));
        }
        config.validate()?;

        let n_tasks = suite.task_count();
        let mut tasks: Vec<Option<Task>> = vec![None; n_tasks];
        let mut task_process = vec![0; n_tasks];
        for (m, p) in suite.processes.iter().enumerate() {
            for t in &p.tasks {
                tasks[t.id.index()] = Some(t.clone());
                task_process[t.id.index()] = m;
            }
        }
        let tasks: Vec<Task> = tasks
            .into_iter()
            .map(|t| t.expect("dense task ids"))
            .collect();
        let start_tasks = suite
            .processes
            .iter()
            .map(|p| p.start_task().expect("validated start task").id)
            .collect();
        let eligibility = Arc::new(EligibilityTable::from_suite(&suite));
        let state = EngineState::fresh(suite.resource_count(), suite.processes.len(), config.seed);
        Ok(Self {
            suite,
            config,
            tasks,
            task_process,
            start_tasks,
            eligibility,
            state,
        })
    }

    pub fn suite(&self) -> &BusinessProcessSuite {
        &self.suite
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn eligibility(&self) -> &Arc<EligibilityTable> {
        &self.eligibility
    }

    pub fn resource_count(&self) -> usize {
        self.eligibility.resources()
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn action_count(&self) -> usize {
        action_count(self.resource_count(), self.task_count())
    }

    pub fn state_width(&self) -> usize {
        self.config.encoding.width(self.resource_count(), self.task_count())
    }

    pub fn decode_action(&self, index: usize) -> Result<Action, EngineError> {
        decode_action(index, self.resource_count(), self.task_count())
    }

    /// Restores the empty initial state and reseeds from the config.
    pub fn reset(&mut self) -> StateVector {
        self.state = EngineState::fresh(
            self.resource_count(),
            self.suite.processes.len(),
            self.config.seed,
        );
        self.encode_state(self.config.encoding)
    }

    /// Replaces the configured seed, then resets.
    pub fn reset_with_seed(&mut self, seed: u64) -> StateVector {
        self.config.seed = seed;
        self.reset()
    }

    /// Runs one step and returns the encoded next state with its reward.
    pub fn step(&mut self, action: Action) -> Result<(StateVector, f64), EngineError> {
        let reward = self.advance(action)?;
        Ok((self.encode_state(self.config.encoding), reward))
    }

    /// Same as [`Engine::step`] with a flat action index.
    pub fn step_index(&mut self, index: usize) -> Result<(StateVector, f64), EngineError> {
        let action = self.decode_action(index)?;
        self.step(action)
    }

    /// Runs one step without encoding the state; returns the step reward.
    pub fn advance(&mut self, action: Action) -> Result<f64, EngineError> {
        if let Action::Assign { resource, task } = action {
            if resource.index() >= self.resource_count() {
                return Err(EngineError::UnknownResource(resource));
            }
            if task.index() >= self.task_count() {
                return Err(EngineError::UnknownTask(task));
            }
        }
        self.arrive();
        if let Action::Assign { resource, task } = action {
            self.allocate(resource, task);
        }
        let reward = self.countdown();
        self.state.step_count += 1;
        Ok(reward)
    }

    fn arrive(&mut self) {
        let st = &mut self.state;
        let trial: f64 = st.arrival_rng.random();
        if trial >= self.config.arrival_probability {
            return;
        }
        let total: f64 = self.suite.processes.iter().map(|p| p.frequency).sum();
        let pick = st.arrival_rng.random::<f64>() * total;
        let mut cumulative = 0.0;
        let mut chosen = self.suite.processes.len() - 1;
        for (m, p) in self.suite.processes.iter().enumerate() {
            cumulative += p.frequency;
            if pick < cumulative {
                chosen = m;
                break;
            }
        }
        let start = self.start_tasks[chosen];
        let queued: f64 = st
            .enabled
            .iter()
            .map(|inst| self.tasks[inst.task.index()].mean_duration)
            .sum();
        if queued + self.tasks[start.index()].mean_duration > self.config.enabled_duration_cap {
            return;
        }
        let case_id = st.cases.len() as u64;
        st.cases.push(BusinessProcessCase {
            case_id,
            process: self.suite.processes[chosen].id,
            current_task: start,
            status: CaseStatus::Running,
            arrival_step: st.step_count,
        });
        st.enabled.push(TaskInstance {
            task: start,
            case_id,
            allocation: None,
        });
    }

    /// Returns whether the allocation happened.
    fn allocate(&mut self, resource: ResourceId, task: TaskId) -> bool {
        let Some(efficiency) = self.eligibility.efficiency(resource, task) else {
            return false;
        };
        let st = &mut self.state;
        if !st.free_resources.contains(&resource) {
            return false;
        }
        let cases = &st.cases;
        let Some(pos) = st
            .enabled
            .iter()
            .enumerate()
            .filter(|(_, inst)| inst.task == task)
            .min_by_key(|(_, inst)| (cases[inst.case_id as usize].arrival_step, inst.case_id))
            .map(|(pos, _)| pos)
        else {
            return false;
        };
        st.free_resources.remove(&resource);
        let mut instance = st.enabled.remove(pos);
        let remaining_steps =
            sample_duration(&self.tasks[task.index()], efficiency, &mut st.service_rng);
        instance.allocation = Some(Allocation {
            resource,
            remaining_steps,
        });
        st.current.push(instance);
        true
    }

    fn countdown(&mut self) -> f64 {
        let st = &mut self.state;
        let mut finished = Vec::new();
        st.current.retain_mut(|inst| {
            let alloc = inst.allocation.as_mut().expect("current instances are allocated");
            alloc.remaining_steps = alloc.remaining_steps.saturating_sub(1);
            if alloc.remaining_steps == 0 {
                finished.push(*inst);
                false
            } else {
                true
            }
        });

        let mut reward = 0.0;
        for inst in finished {
            let alloc = inst.allocation.expect("current instances are allocated");
            st.free_resources.insert(alloc.resource);
            let def = &self.tasks[inst.task.index()];
            match sample_next_task(def, &mut st.service_rng) {
                NextTask::Task(next) => {
                    st.cases[inst.case_id as usize].current_task = next;
                    st.enabled.push(TaskInstance {
                        task: next,
                        case_id: inst.case_id,
                        allocation: None,
                    });
                }
                NextTask::CaseComplete => {
                    let case = &mut st.cases[inst.case_id as usize];
                    case.status = CaseStatus::Completed;
                    let m = self.task_process[inst.task.index()];
                    let r = self.suite.processes[m].reward;
                    st.completed_per_process[m] += 1;
                    st.completed_reward_total += r;
                    reward += r;
                }
            }
        }
        reward
    }

    pub fn encode_state(&self, encoding: Encoding) -> StateVector {
        let r = self.resource_count();
        let t = self.task_count();
        let st = &self.state;

        let mut allocated_task = vec![-1.0; r];
        for inst in &st.current {
            if let Some(a) = inst.allocation {
                allocated_task[a.resource.index()] = inst.task.0 as f64;
            }
        }
        let mut counts = vec![0usize; t];
        for inst in &st.enabled {
            counts[inst.task.index()] += 1;
        }

        let mut values = Vec::with_capacity(encoding.width(r, t));
        match encoding {
            Encoding::Std => {
                for k in 0..r {
                    for i in 0..t {
                        let cell = if allocated_task[k] == i as f64 {
                            1.0
                        } else if counts[i] > 0
                            && self
                                .eligibility
                                .is_eligible(ResourceId(k as u32), TaskId(i as u32))
                        {
                            0.0
                        } else {
                            -1.0
                        };
                        values.push(cell);
                    }
                }
            }
            Encoding::A1 | Encoding::A2 => {
                values.extend_from_slice(&allocated_task);
                values.extend(counts.iter().map(|&c| c as f64));
                if encoding == Encoding::A2 {
                    for k in 0..r {
                        for i in 0..t {
                            let eligible = self
                                .eligibility
                                .is_eligible(ResourceId(k as u32), TaskId(i as u32));
                            values.push(if eligible { 1.0 } else { -1.0 });
                        }
                    }
                }
            }
            Encoding::A10 => {
                values.extend_from_slice(&allocated_task);
                let total: usize = counts.iter().sum();
                if total == 0 {
                    values.extend(std::iter::repeat_n(0.0, t));
                } else {
                    values.extend(counts.iter().map(|&c| c as f64 / total as f64));
                }
            }
        }
        StateVector { encoding, values }
    }

    pub fn observe_privileged(&self) -> PrivilegedView {
        let st = &self.state;
        PrivilegedView {
            step: st.step_count,
            enabled: st
                .enabled
                .iter()
                .map(|inst| EnabledEntry {
                    task: inst.task,
                    case_id: inst.case_id,
                    arrival_step: st.cases[inst.case_id as usize].arrival_step,
                    mean_duration: self.tasks[inst.task.index()].mean_duration,
                })
                .collect(),
            free_resources: st.free_resources.iter().copied().collect(),
            eligibility: Arc::clone(&self.eligibility),
        }
    }

    /// Sum of mean durations currently waiting in the enabled set.
    pub fn enabled_mean_duration(&self) -> f64 {
        self.state
            .enabled
            .iter()
            .map(|inst| self.tasks[inst.task.index()].mean_duration)
            .sum()
    }

    /// Checks resource conservation, the one-live-instance-per-case rule and
    /// reward bookkeeping. Returns a description of each broken invariant.
    pub fn invariant_violations(&self) -> Vec<String> {
        let st = &self.state;
        let mut out = Vec::new();

        let mut holders = vec![0usize; self.resource_count()];
        for inst in &st.current {
            match inst.allocation {
                Some(a) => holders[a.resource.index()] += 1,
                None => out.push(format!("unallocated instance of case {} in current", inst.case_id)),
            }
        }
        for (k, &n) in holders.iter().enumerate() {
            let free = st.free_resources.contains(&ResourceId(k as u32));
            if usize::from(free) + n != 1 {
                out.push(format!("resource {k}: free = {free}, held by {n} instances"));
            }
        }
        if st.free_resources.iter().any(|r| r.index() >= self.resource_count()) {
            out.push("free set holds an unknown resource".into());
        }
        for inst in &st.enabled {
            if inst.allocation.is_some() {
                out.push(format!("allocated instance of case {} in enabled", inst.case_id));
            }
        }

        // Per task id: live instances == running cases positioned on that task.
        let t = self.task_count();
        let mut live = vec![0usize; t];
        let mut per_case = vec![0usize; st.cases.len()];
        for inst in st.enabled.iter().chain(&st.current) {
            live[inst.task.index()] += 1;
            per_case[inst.case_id as usize] += 1;
            let case = &st.cases[inst.case_id as usize];
            if case.status != CaseStatus::Running || case.current_task != inst.task {
                out.push(format!("instance of {} does not match case {}", inst.task, inst.case_id));
            }
        }
        let mut running = vec![0usize; t];
        for case in &st.cases {
            let m = self.task_process[case.current_task.index()];
            if self.suite.processes[m].id != case.process {
                out.push(format!("case {} sits on a task of another process", case.case_id));
            }
            if case.status == CaseStatus::Running {
                running[case.current_task.index()] += 1;
                if per_case[case.case_id as usize] != 1 {
                    out.push(format!(
                        "running case {} has {} live instances",
                        case.case_id, per_case[case.case_id as usize]
                    ));
                }
            } else if per_case[case.case_id as usize] != 0 {
                out.push(format!("completed case {} still has instances", case.case_id));
            }
        }
        for i in 0..t {
            if live[i] != running[i] {
                out.push(format!(
                    "task {i}: {} live instances vs {} running cases",
                    live[i], running[i]
                ));
            }
        }

        let expected: f64 = self
            .suite
            .processes
            .iter()
            .zip(&st.completed_per_process)
            .map(|(p, &n)| p.reward * n as f64)
            .sum();
        if expected != st.completed_reward_total {
            out.push(format!(
                "reward total {} differs from per-process sum {expected}",
                st.completed_reward_total
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process_model::paper_suite;

    fn engine(config: EngineConfig) -> Engine {
        Engine::new(paper_suite(), config).unwrap()
    }

    fn assign(k: u32, i: u32) -> Action {
        Action::Assign {
            resource: ResourceId(k),
            task: TaskId(i),
        }
    }

    /// Pushes a running case with one instance directly into the state.
    fn inject(e: &mut Engine, task: u32, allocation: Option<Allocation>) -> u64 {
        let case_id = e.state.cases.len() as u64;
        let m = e.task_process[task as usize];
        e.state.cases.push(BusinessProcessCase {
            case_id,
            process: e.suite.processes[m].id,
            current_task: TaskId(task),
            status: CaseStatus::Running,
            arrival_step: e.state.step_count,
        });
        let inst = TaskInstance {
            task: TaskId(task),
            case_id,
            allocation,
        };
        match allocation {
            Some(a) => {
                e.state.free_resources.remove(&a.resource);
                e.state.current.push(inst);
            }
            None => e.state.enabled.push(inst),
        }
        case_id
    }

    #[test]
    fn decode_action_layout() {
        assert_eq!(decode_action(24, 3, 8).unwrap(), Action::NoOp);
        assert_eq!(decode_action(0, 3, 8).unwrap(), assign(0, 0));
        assert_eq!(decode_action(9, 3, 8).unwrap(), assign(1, 1));
        assert_eq!(
            decode_action(25, 3, 8),
            Err(EngineError::ActionIndexOutOfRange { index: 25, max: 24 })
        );
        for idx in 0..25 {
            let a = decode_action(idx, 3, 8).unwrap();
            assert_eq!(encode_action(a, 3, 8), idx);
        }
    }

    #[test]
    fn reset_gives_empty_a10_state() {
        let mut e = engine(EngineConfig {
            arrival_probability: 1.0,
            ..EngineConfig::default()
        });
        for n in 0..30 {
            e.step_index(n % 25).unwrap();
        }
        let s = e.reset();
        let mut expected = vec![-1.0; 3];
        expected.extend([0.0; 8]);
        assert_eq!(s.values, expected);
        assert_eq!(s.encoding, Encoding::A10);
        assert_eq!(e.state().completed_reward_total, 0.0);
        assert_eq!(e.state().step_count, 0);
        assert!(e.state().cases.is_empty());
        assert_eq!(e.state().free_resources.len(), 3);
    }

    #[test]
    fn reset_replays_identically() {
        let mut e = engine(EngineConfig {
            seed: 11,
            ..EngineConfig::default()
        });
        let script: Vec<usize> = (0..200).map(|n| (n * 7 + 3) % 25).collect();
        let run = |e: &mut Engine| {
            e.reset();
            script
                .iter()
                .map(|&a| e.step_index(a).unwrap())
                .collect::<Vec<_>>()
        };
        let first = run(&mut e);
        let second = run(&mut e);
        assert_eq!(first, second);
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        let mut e = engine(EngineConfig::default());
        assert!(e.step_index(25).is_err());
        assert_eq!(
            e.step(assign(3, 0)).unwrap_err(),
            EngineError::UnknownResource(ResourceId(3))
        );
        assert_eq!(e.state().step_count, 0);
    }

    #[test]
    fn busy_resource_assignment_matches_noop() {
        let mut a = engine(EngineConfig {
            seed: 5,
            ..EngineConfig::default()
        });
        inject(
            &mut a,
            2,
            Some(Allocation {
                resource: ResourceId(0),
                remaining_steps: 5,
            }),
        );
        inject(&mut a, 5, None);
        let mut b = a.clone();
        let (sa, ra) = a.step(assign(0, 5)).unwrap();
        let (sb, rb) = b.step(Action::NoOp).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(ra, rb);
        assert_eq!(a.state().enabled, b.state().enabled);
        assert_eq!(a.state().current, b.state().current);
        // Same RNG position afterwards.
        let (sa, ra) = a.step(Action::NoOp).unwrap();
        let (sb, rb) = b.step(Action::NoOp).unwrap();
        assert_eq!((sa, ra), (sb, rb));
    }

    #[test]
    fn final_task_completion_pays_process_reward() {
        let mut e = engine(EngineConfig {
            arrival_probability: 0.0,
            ..EngineConfig::default()
        });
        // Task 3 and task 7 have no successors.
        inject(
            &mut e,
            7,
            Some(Allocation {
                resource: ResourceId(0),
                remaining_steps: 1,
            }),
        );
        let (_, r) = e.step(Action::NoOp).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(e.state().completed_reward_total, 1.0);
        assert_eq!(e.state().completed_per_process, vec![0, 1]);
        assert_eq!(e.state().cases[0].status, CaseStatus::Completed);
        assert!(e.state().free_resources.contains(&ResourceId(0)));
        assert!(e.invariant_violations().is_empty());
    }

    #[test]
    fn allocation_picks_oldest_instance() {
        let mut e = engine(EngineConfig {
            arrival_probability: 0.0,
            ..EngineConfig::default()
        });
        let older = inject(&mut e, 4, None);
        e.state.step_count = 3;
        let newer = inject(&mut e, 4, None);
        // Make the newer case appear first in the enabled list.
        e.state.enabled.reverse();
        e.step(assign(0, 4)).unwrap();
        let waiting_on_4: Vec<u64> = e
            .state()
            .enabled
            .iter()
            .filter(|i| i.task == TaskId(4))
            .map(|i| i.case_id)
            .collect();
        assert_eq!(waiting_on_4, vec![newer]);
        assert_ne!(older, newer);
    }

    #[test]
    fn ineligible_assignment_is_ignored() {
        let mut e = engine(EngineConfig {
            arrival_probability: 0.0,
            ..EngineConfig::default()
        });
        inject(&mut e, 0, None);
        // Resource 0 is not eligible for task 0.
        e.step(assign(0, 0)).unwrap();
        assert_eq!(e.state().enabled.len(), 1);
        assert!(e.state().current.is_empty());
    }

    #[test]
    fn a10_single_task_queue() {
        let mut e = engine(EngineConfig::default());
        inject(&mut e, 2, None);
        let s = e.encode_state(Encoding::A10);
        assert_eq!(&s.values[..3], &[-1.0, -1.0, -1.0]);
        assert_eq!(&s.values[3..], &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn std_encoding_cells() {
        let mut e = engine(EngineConfig::default());
        inject(
            &mut e,
            0,
            Some(Allocation {
                resource: ResourceId(1),
                remaining_steps: 3,
            }),
        );
        inject(&mut e, 3, None);
        let s = e.encode_state(Encoding::Std);
        assert_eq!(s.values.len(), 24);
        let cell = |k: usize, i: usize| s.values[k * 8 + i];
        assert_eq!(cell(1, 0), 1.0);
        assert_eq!(cell(2, 3), 0.0);
        assert_eq!(cell(1, 3), 0.0);
        assert_eq!(cell(0, 0), -1.0);
        assert_eq!(cell(0, 3), -1.0);
        assert_eq!(cell(2, 0), -1.0);
    }

    #[test]
    fn a1_and_a2_layouts() {
        let mut e = engine(EngineConfig::default());
        inject(
            &mut e,
            5,
            Some(Allocation {
                resource: ResourceId(2),
                remaining_steps: 3,
            }),
        );
        inject(&mut e, 4, None);
        inject(&mut e, 4, None);
        inject(&mut e, 1, None);
        let a1 = e.encode_state(Encoding::A1);
        assert_eq!(
            a1.values,
            vec![-1.0, -1.0, 5.0, 0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0]
        );
        let a10 = e.encode_state(Encoding::A10);
        assert_eq!(&a10.values[3..], &[0.0, 1.0 / 3.0, 0.0, 0.0, 2.0 / 3.0, 0.0, 0.0, 0.0]);
        let a2 = e.encode_state(Encoding::A2);
        assert_eq!(a2.values.len(), 11 + 24);
        assert_eq!(&a2.values[..11], &a1.values[..]);
        // Row for resource 0: '-' on tasks 0 and 3.
        assert_eq!(
            &a2.values[11..19],
            &[-1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn widths() {
        for enc in Encoding::ALL {
            let e = engine(EngineConfig {
                encoding: enc,
                ..EngineConfig::default()
            });
            let expected = match enc {
                Encoding::Std => 24,
                Encoding::A1 | Encoding::A10 => 11,
                Encoding::A2 => 35,
            };
            assert_eq!(e.encode_state(enc).values.len(), expected);
            assert_eq!(e.state_width(), expected);
        }
        assert!("a3".parse::<Encoding>().is_err());
        assert_eq!("a10".parse::<Encoding>().unwrap(), Encoding::A10);
    }

    #[test]
    fn privileged_view_of_empty_and_first_arrival() {
        let mut e = engine(EngineConfig {
            arrival_probability: 1.0,
            ..EngineConfig::default()
        });
        let v = e.observe_privileged();
        assert!(v.enabled.is_empty());
        assert_eq!(v.free_resources, vec![ResourceId(0), ResourceId(1), ResourceId(2)]);
        e.step(Action::NoOp).unwrap();
        let v = e.observe_privileged();
        assert_eq!(v.enabled.len(), 1);
        // The arrival happened during step index 0; the view is taken after it.
        assert_eq!(v.enabled[0].arrival_step, 0);
        assert_eq!(v.step, 1);
        let start = v.enabled[0].task;
        assert!(start == TaskId(0) || start == TaskId(4));
    }

    #[test]
    fn cap_blocks_new_cases() {
        let mut e = engine(EngineConfig {
            arrival_probability: 1.0,
            enabled_duration_cap: 50.0,
            ..EngineConfig::default()
        });
        for _ in 0..200 {
            e.step(Action::NoOp).unwrap();
            assert!(e.enabled_mean_duration() <= 50.0);
        }
        // Without allocations nothing leaves the enabled set, so it saturates.
        assert!(e.enabled_mean_duration() > 50.0 - 45.0);
    }

    #[test]
    fn config_ranges() {
        let bad = EngineConfig {
            arrival_probability: 1.5,
            ..EngineConfig::default()
        };
        assert!(Engine::new(paper_suite(), bad).is_err());
        let bad = EngineConfig {
            enabled_duration_cap: 0.0,
            ..EngineConfig::default()
        };
        assert!(Engine::new(paper_suite(), bad).is_err());
    }
}
