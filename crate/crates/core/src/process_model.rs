//! Static business-process formalism: tasks, transitions, resources,
//! eligibility, processes and the suite that ties them together.
//!
//! A suite is loaded from JSON, validated as a whole, and then treated as
//! immutable. The two stochastic primitives used by the engine
//! ([`sample_next_task`] and [`sample_duration`]) live here as well, since
//! they depend only on the static task definition and a caller-owned RNG.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed when checking that transition probabilities sum to at most one.
const PROB_MASS_TOLERANCE: f64 = 1e-9;

const PAPER_SUITE_JSON: &str = include_str!("../suites/paper_suite.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ResourceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task {}", self.0)
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "resource {}", self.0)
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "process {}", self.0)
    }
}

/// Directed edge from one task to a successor, taken with `probability`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskTransition {
    #[serde(rename = "to")]
    pub target: TaskId,
    #[serde(rename = "p")]
    pub probability: f64,
}

/// A single unit of work. Durations are in engine steps.
///
/// Transition probabilities may sum to less than one; the residual mass is
/// the probability that the case completes after this task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    #[serde(rename = "d")]
    pub mean_duration: f64,
    #[serde(rename = "s")]
    pub duration_std: f64,
    #[serde(rename = "start")]
    pub is_start: bool,
    #[serde(default)]
    pub transitions: Vec<TaskTransition>,
}

/// Efficiency modifier of one resource on one task. Lower is faster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eligibility {
    pub resource: ResourceId,
    pub task: TaskId,
    pub efficiency: f64,
}

/// Sparse (resource, task) -> efficiency table. A missing entry means the
/// resource cannot execute the task.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EligibilityMap {
    entries: Vec<Eligibility>,
}

impl EligibilityMap {
    pub fn new(entries: Vec<Eligibility>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[Eligibility] {
        &self.entries
    }

    pub fn push(&mut self, resource: ResourceId, task: TaskId, efficiency: f64) {
        self.entries.push(Eligibility {
            resource,
            task,
            efficiency,
        });
    }

    pub fn efficiency(&self, resource: ResourceId, task: TaskId) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.resource == resource && e.task == task)
            .map(|e| e.efficiency)
    }

    pub fn is_eligible(&self, resource: ResourceId, task: TaskId) -> bool {
        self.efficiency(resource, task).is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusinessProcess {
    pub id: ProcessId,
    /// Relative arrival frequency; only ratios between processes matter.
    pub frequency: f64,
    /// Reward granted once per completed case.
    pub reward: f64,
    pub tasks: Vec<Task>,
}

impl BusinessProcess {
    pub fn start_task(&self) -> Option<&Task> {
        self.tasks.iter().find(|t| t.is_start)
    }
}

/// Resources, eligibility and processes forming one simulated environment.
///
/// Task ids must be exactly `0..task_count()` and resource ids exactly
/// `0..resource_count()`, because state vectors and action indices are laid
/// out by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BusinessProcessSuite {
    pub resources: Vec<ResourceId>,
    pub eligibility: EligibilityMap,
    pub processes: Vec<BusinessProcess>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl BusinessProcessSuite {
    pub fn resource_count(&self) -> usize {
        self.resources.len()
    }

    pub fn task_count(&self) -> usize {
        self.processes.iter().map(|p| p.tasks.len()).sum()
    }

    pub fn tasks(&self) -> impl Iterator<Item = (&BusinessProcess, &Task)> {
        self.processes
            .iter()
            .flat_map(|p| p.tasks.iter().map(move |t| (p, t)))
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.tasks().map(|(_, t)| t).find(|t| t.id == id)
    }

    pub fn process_of(&self, id: TaskId) -> Option<&BusinessProcess> {
        self.tasks().find(|(_, t)| t.id == id).map(|(p, _)| p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("suite serialization is infallible")
    }
}

/// One broken rule, identified by a stable rule name and a location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub location: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.rule, self.location)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, rule: &'static str, location: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            location: location.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read suite file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed suite document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid suite:\n{0}")]
    Invalid(ValidationReport),
    #[error("unknown {0}")]
    UnknownTask(TaskId),
}

/// Parses and validates a suite document.
pub fn load_suite(document: &str) -> Result<BusinessProcessSuite, SuiteError> {
    let suite: BusinessProcessSuite = serde_json::from_str(document)?;
    let report = validate_suite(&suite);
    if report.is_ok() {
        Ok(suite)
    } else {
        Err(SuiteError::Invalid(report))
    }
}

pub fn load_suite_file(path: impl AsRef<Path>) -> Result<BusinessProcessSuite, SuiteError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_suite(&text)
}

/// The bundled two-process, three-resource evaluation suite.
pub fn paper_suite() -> BusinessProcessSuite {
    load_suite(PAPER_SUITE_JSON).expect("bundled suite is valid")
}

pub fn paper_suite_json() -> &'static str {
    PAPER_SUITE_JSON
}

/// Checks every structural rule and reports all violations.
pub fn validate_suite(suite: &BusinessProcessSuite) -> ValidationReport {
    let mut report = ValidationReport::default();

    if suite.processes.is_empty() {
        report.push("empty-suite", "empty suite: no processes defined");
    }
    if suite.resources.is_empty() {
        report.push("no-resources", "suite defines no resources");
    }

    let mut resource_ids = BTreeSet::new();
    for r in &suite.resources {
        if !resource_ids.insert(*r) {
            report.push("duplicate-resource", format!("{r}"));
        }
    }
    if resource_ids.iter().enumerate().any(|(n, r)| r.index() != n) {
        report.push("dense-resource-ids", "resource ids must be exactly 0..|R|");
    }

    // task id -> owning process
    let mut owner: BTreeMap<TaskId, ProcessId> = BTreeMap::new();
    let mut process_ids = BTreeSet::new();
    for p in &suite.processes {
        if !process_ids.insert(p.id) {
            report.push("duplicate-process", format!("{}", p.id));
        }
        if !(p.frequency.is_finite() && p.frequency > 0.0) {
            report.push("frequency", format!("{}: frequency {}", p.id, p.frequency));
        }
        if !p.reward.is_finite() {
            report.push("reward", format!("{}: reward {}", p.id, p.reward));
        }
        let starts = p.tasks.iter().filter(|t| t.is_start).count();
        if starts != 1 {
            report.push("start-task", format!("{}: {starts} start tasks", p.id));
        }
        for t in &p.tasks {
            if let Some(prev) = owner.insert(t.id, p.id) {
                report.push("duplicate-task", format!("{} in {prev} and {}", t.id, p.id));
            }
        }
    }
    if owner.keys().enumerate().any(|(n, t)| t.index() != n) {
        report.push("dense-task-ids", "task ids must be exactly 0..|T|");
    }

    for p in &suite.processes {
        for t in &p.tasks {
            if !(t.mean_duration.is_finite() && t.mean_duration > 0.0) {
                report.push("duration", format!("{}: d = {}", t.id, t.mean_duration));
            }
            if !(t.duration_std.is_finite() && t.duration_std >= 0.0) {
                report.push("duration-std", format!("{}: s = {}", t.id, t.duration_std));
            }
            let mut mass = 0.0;
            for c in &t.transitions {
                if !(c.probability > 0.0 && c.probability <= 1.0) {
                    report.push(
                        "prob-range",
                        format!("{} -> {}: p = {}", t.id, c.target.0, c.probability),
                    );
                }
                mass += c.probability;
                if owner.get(&c.target) != Some(&p.id) {
                    report.push(
                        "transition-target",
                        format!("{} -> {} leaves {}", t.id, c.target.0, p.id),
                    );
                }
            }
            if mass > 1.0 + PROB_MASS_TOLERANCE {
                report.push("prob-mass", format!("{}: outgoing mass {mass}", t.id));
            }
        }
    }

    let mut seen_pairs = BTreeSet::new();
    for e in suite.eligibility.entries() {
        if !resource_ids.contains(&e.resource) {
            report.push(
                "eligibility-resource",
                format!("{} on {} is undefined", e.resource, e.task),
            );
        }
        // Def. 6, second condition: no eligibility outside the defined processes.
        if !owner.contains_key(&e.task) {
            report.push(
                "Def6-scope",
                format!("{} eligible for undefined {}", e.resource, e.task),
            );
        }
        if !(e.efficiency.is_finite() && e.efficiency > 0.0) {
            report.push(
                "efficiency",
                format!("{} on {}: e = {}", e.resource, e.task, e.efficiency),
            );
        }
        if !seen_pairs.insert((e.resource, e.task)) {
            report.push(
                "duplicate-eligibility",
                format!("{} on {}", e.resource, e.task),
            );
        }
    }

    // Def. 6, first condition: every resource is eligible for some defined task.
    for r in &suite.resources {
        let covered = suite
            .eligibility
            .entries()
            .iter()
            .any(|e| e.resource == *r && owner.contains_key(&e.task));
        if !covered {
            report.push("Def6-coverage", format!("{r} is eligible for no task"));
        }
    }

    report
}

/// Resources with an eligibility entry for `task`.
pub fn eligible_resources(
    suite: &BusinessProcessSuite,
    task: TaskId,
) -> Result<BTreeSet<ResourceId>, SuiteError> {
    if suite.task(task).is_none() {
        return Err(SuiteError::UnknownTask(task));
    }
    Ok(suite
        .eligibility
        .entries()
        .iter()
        .filter(|e| e.task == task)
        .map(|e| e.resource)
        .collect())
}

/// Outcome of leaving a completed task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextTask {
    Task(TaskId),
    CaseComplete,
}

/// Picks the successor of `task`, or case completion with the residual mass.
///
/// Consumes one uniform draw unless the task has no transitions.
pub fn sample_next_task<R: Rng + ?Sized>(task: &Task, rng: &mut R) -> NextTask {
    if task.transitions.is_empty() {
        return NextTask::CaseComplete;
    }
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for c in &task.transitions {
        cumulative += c.probability;
        if u < cumulative {
            return NextTask::Task(c.target);
        }
    }
    NextTask::CaseComplete
}

/// Draws a realized duration in whole steps.
///
/// The base duration is Normal(d, s^2); it is scaled by the resource
/// efficiency, rounded half away from zero and clamped to at least one step.
/// Always consumes exactly one normal draw.
pub fn sample_duration<R: Rng + ?Sized>(task: &Task, efficiency: f64, rng: &mut R) -> u32 {
    let z: f64 = rng.sample(StandardNormal);
    let base = task.mean_duration + task.duration_std * z;
    let scaled = (base * efficiency).round();
    if scaled.is_nan() || scaled < 1.0 {
        1
    } else if scaled >= u32::MAX as f64 {
        u32::MAX
    } else {
        scaled as u32
    }
}
