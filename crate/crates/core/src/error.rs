use thiserror::Error;

use crate::ids::NodeId;
use crate::time::SimTime;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled in the past: now={now}, fire_at={fire_at}")]
    ScheduleInPast { now: SimTime, fire_at: SimTime },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("protocol error at {node} (t={at}): {detail}{}", format_tail(.trace_tail))]
    Protocol {
        node: NodeId,
        at: SimTime,
        detail: String,
        trace_tail: Vec<String>,
    },

    #[error("report output failed: {0}")]
    Io(String),
}

fn format_tail(tail: &[String]) -> String {
    if tail.is_empty() {
        String::new()
    } else {
        format!("\nlast events:\n  {}", tail.join("\n  "))
    }
}

/// A transition that the protocol state machine does not admit.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal transition: {event} in state {state}")]
pub struct IllegalTransition {
    pub state: String,
    pub event: String,
}

impl IllegalTransition {
    pub fn new(state: impl std::fmt::Debug, event: impl std::fmt::Debug) -> Self {
        IllegalTransition {
            state: format!("{state:?}"),
            event: format!("{event:?}"),
        }
    }
}
