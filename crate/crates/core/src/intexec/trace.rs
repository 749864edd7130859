use std::fmt;

use serde::{Deserialize, Serialize};

/// Primitive arithmetic categories audited during quantized execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpCategory {
    IntMul,
    IntAdd,
    Shift,
    FloatMul,
    FloatAdd,
    Round,
    Clamp,
}

impl OpCategory {
    pub const ALL: [OpCategory; 7] = [
        OpCategory::IntMul,
        OpCategory::IntAdd,
        OpCategory::Shift,
        OpCategory::FloatMul,
        OpCategory::FloatAdd,
        OpCategory::Round,
        OpCategory::Clamp,
    ];

    pub fn name(self) -> &'static str {
        ["int_mul", "int_add", "shift", "float_mul", "float_add", "round", "clamp"][self as usize]
    }

    pub fn is_float(self) -> bool {
        matches!(self, OpCategory::FloatMul | OpCategory::FloatAdd)
    }
}

impl fmt::Display for OpCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Node id, or `input` for host-side input quantization.
    pub node: String,
    pub category: OpCategory,
    pub count: u64,
}

/// Append-only log of arithmetic performed during one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpTrace {
    events: Vec<TraceEvent>,
}

impl OpTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, node: &str, category: OpCategory, count: usize) {
        if count > 0 {
            self.events.push(TraceEvent { node: node.to_string(), category, count: count as u64 });
        }
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn count(&self, category: OpCategory) -> u64 {
        self.events.iter().filter(|e| e.category == category).map(|e| e.count).sum()
    }

    pub fn count_in(&self, node: &str, category: OpCategory) -> u64 {
        self.events.iter().filter(|e| e.node == node && e.category == category).map(|e| e.count).sum()
    }

    pub fn float_ops(&self) -> u64 {
        self.events.iter().filter(|e| e.category.is_float()).map(|e| e.count).sum()
    }

    /// Nodes that recorded at least one operation of `category`, in first-seen order.
    pub fn nodes_with(&self, category: OpCategory) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in self.events.iter().filter(|e| e.category == category) {
            if !out.contains(&e.node.as_str()) {
                out.push(&e.node);
            }
        }
        out
    }

    /// `node,category,count` rows in recording order, with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,category,count\n");
        for e in &self.events {
            s.push_str(&format!("{},{},{}\n", e.node, e.category, e.count));
        }
        s
    }
}
