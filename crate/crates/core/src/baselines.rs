//! Dispatch heuristics over the privileged engine view.
//!
//! Both rules pick one waiting instance and give it the lowest-id free
//! resource that is eligible for it. Neither ever returns an assignment the
//! engine would reject.

use crate::process_model::ResourceId;
use crate::sim_engine::{Action, EnabledEntry, PrivilegedView};

fn lowest_free_eligible(view: &PrivilegedView, entry: &EnabledEntry) -> Option<ResourceId> {
    // Both lists are ascending, so the first hit is the lowest id.
    view.eligibility
        .eligible(entry.task)
        .iter()
        .copied()
        .find(|r| view.free_resources.binary_search(r).is_ok())
}

/// First in, first out by case arrival.
///
/// Cases are scanned by `(arrival_step, case_id)`; an earliest case with no
/// free eligible resource is skipped in favour of the next one.
pub fn fifo_action(view: &PrivilegedView) -> Action {
    let mut order: Vec<&EnabledEntry> = view.enabled.iter().collect();
    order.sort_by_key(|e| (e.arrival_step, e.case_id));
    order
        .into_iter()
        .find_map(|e| {
            lowest_free_eligible(view, e).map(|resource| Action::Assign {
                resource,
                task: e.task,
            })
        })
        .unwrap_or(Action::NoOp)
}

/// Shortest mean processing time first, ignoring resource efficiencies.
///
/// Ties go to the lower task id, then the earlier case.
pub fn spt_action(view: &PrivilegedView) -> Action {
    view.enabled
        .iter()
        .filter_map(|e| lowest_free_eligible(view, e).map(|r| (e, r)))
        .min_by(|(a, _), (b, _)| {
            a.mean_duration
                .total_cmp(&b.mean_duration)
                .then(a.task.cmp(&b.task))
                .then(a.arrival_step.cmp(&b.arrival_step))
                .then(a.case_id.cmp(&b.case_id))
        })
        .map(|(e, resource)| Action::Assign {
            resource,
            task: e.task,
        })
        .unwrap_or(Action::NoOp)
}
