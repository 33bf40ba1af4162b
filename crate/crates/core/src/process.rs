//! Management and coordination processes.
//!
//! A management process is the ordered per-profile step plan (numbered steps
//! with pending/done/failed status). A coordination process binds several
//! management processes together through artifact edges and must stay acyclic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub number: u32,
    pub action: String,
    pub status: StepStatus,
    /// Stage artifact this step contributed to, if any.
    pub artifact_ref: Option<String>,
}

/// Ordered step plan for one profile. Step numbers are strictly increasing
/// and a step may only run once all prior steps are done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagementProcess {
    pub process_id: String,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProcessError {
    #[error("step {number} breaks the strictly increasing step order")]
    OutOfOrder { number: u32 },
    #[error("step {number} cannot run while an earlier step is not done")]
    PriorStepNotDone { number: u32 },
}

impl ManagementProcess {
    pub fn new(process_id: impl Into<String>) -> Self {
        Self {
            process_id: process_id.into(),
            steps: Vec::new(),
        }
    }

    /// Record a completed step. Enforces increasing numbers and that no
    /// earlier step is pending or failed.
    pub fn record_done(
        &mut self,
        number: u32,
        action: &str,
        artifact_ref: Option<String>,
    ) -> Result<(), ProcessError> {
        if let Some(last) = self.steps.last() {
            if number <= last.number {
                return Err(ProcessError::OutOfOrder { number });
            }
        }
        if self.steps.iter().any(|s| s.status != StepStatus::Done) {
            return Err(ProcessError::PriorStepNotDone { number });
        }
        self.steps.push(StepRecord {
            number,
            action: action.to_string(),
            status: StepStatus::Done,
            artifact_ref,
        });
        Ok(())
    }

    pub fn record_failed(&mut self, number: u32, action: &str) {
        self.steps.push(StepRecord {
            number,
            action: action.to_string(),
            status: StepStatus::Failed,
            artifact_ref: None,
        });
    }

    pub fn step_numbers(&self) -> Vec<u32> {
        self.steps.iter().map(|s| s.number).collect()
    }
}

/// Edge from one management process's output artifact into another's input
/// slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationEdge {
    pub from: usize,
    pub output: String,
    pub to: usize,
    pub input: String,
}

/// DAG of management-process references with artifact bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationProcess {
    /// Management process references, e.g. one per selected capability.
    pub nodes: Vec<String>,
    pub edges: Vec<CoordinationEdge>,
    /// Input slots per node that must be bound by some edge.
    pub required_inputs: Vec<Vec<String>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoordinationError {
    #[error("coordination edges form a cycle")]
    CycleInCoordination,
    #[error("node {node} input slot `{input}` is unbound")]
    UnboundInput { node: usize, input: String },
    #[error("edge references node {node} which does not exist")]
    UnknownNode { node: usize },
}

impl CoordinationProcess {
    pub fn validate(&self) -> Result<(), CoordinationError> {
        let n = self.nodes.len();
        for e in &self.edges {
            for node in [e.from, e.to] {
                if node >= n {
                    return Err(CoordinationError::UnknownNode { node });
                }
            }
        }
        // Kahn's algorithm for cycle detection.
        let mut indegree = vec![0usize; n];
        for e in &self.edges {
            indegree[e.to] += 1;
        }
        let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(u) = queue.pop() {
            visited += 1;
            for e in self.edges.iter().filter(|e| e.from == u) {
                indegree[e.to] -= 1;
                if indegree[e.to] == 0 {
                    queue.push(e.to);
                }
            }
        }
        if visited != n {
            return Err(CoordinationError::CycleInCoordination);
        }
        for (node, inputs) in self.required_inputs.iter().enumerate() {
            for input in inputs {
                let bound = self
                    .edges
                    .iter()
                    .any(|e| e.to == node && &e.input == input);
                if !bound {
                    return Err(CoordinationError::UnboundInput {
                        node,
                        input: input.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}
