//! Threshold/duration rules over telemetry, with episode-based alarm
//! hysteresis: a rule fires once its predicate has held continuously for
//! the sustain window, then stays quiet until the predicate resets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bus::TopicFilter;
use crate::model::{NodeId, Source, TelemetryReading};
use crate::twin::TwinId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(&self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Lt => value < threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Le => value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

/// Value written by a `set_twin_property` action: either the triggering
/// reading's value (`"$value"`) or a literal number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueExpr {
    ReadingValue,
    Literal(f64),
}

impl Serialize for ValueExpr {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            ValueExpr::ReadingValue => ser.serialize_str("$value"),
            ValueExpr::Literal(v) => ser.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ValueExpr {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(de)?;
        match raw {
            serde_json::Value::String(s) if s == "$value" => Ok(ValueExpr::ReadingValue),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(ValueExpr::Literal)
                .ok_or_else(|| serde::de::Error::custom("literal out of f64 range")),
            other => Err(serde::de::Error::custom(format!(
                "expected \"$value\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    RaiseAlarm {
        severity: Severity,
        /// `{rule}`, `{node}`, `{source}`, `{value}` and `{threshold}` are
        /// substituted.
        message_template: String,
    },
    SetTwinProperty {
        path: String,
        value_expr: ValueExpr,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub source: Source,
    pub comparator: Comparator,
    pub threshold: f64,
}

/// One dispatch rule (the rules-file entry format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub filter: TopicFilter,
    pub predicate: Predicate,
    #[serde(default)]
    pub sustain_ms: u64,
    pub action: RuleAction,
}

impl Rule {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.id.is_empty() {
            return Err(RuleError::EmptyId);
        }
        if !self.predicate.threshold.is_finite() {
            return Err(RuleError::NonFiniteThreshold(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleError {
    #[error("rule id must be non-empty")]
    EmptyId,
    #[error("rule `{0}` has a non-finite threshold")]
    NonFiniteThreshold(String),
}

/// An alarm raised by a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub rule_id: String,
    pub node: NodeId,
    pub source: Source,
    /// When the current violation episode began.
    pub first_violation_ms: u64,
    /// When the alarm fired; at least `first_violation_ms + sustain_ms`.
    pub raised_ms: u64,
    pub observed: f64,
    pub severity: Severity,
    pub message: String,
}

/// What a fired rule asks the dispatcher to do.
#[derive(Debug, Clone, PartialEq)]
pub enum RuleOutcome {
    Alarm(AlarmEvent),
    SetProperty { path: String, value: f64 },
}

#[derive(Debug, Default, Clone, Copy)]
struct Episode {
    first_violation_ms: Option<u64>,
    fired: bool,
}

/// Stateful evaluator: tracks one violation episode per (rule, twin).
pub struct RuleEngine {
    rules: Vec<Rule>,
    episodes: HashMap<(usize, TwinId), Episode>,
}

impl RuleEngine {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        for rule in &rules {
            rule.validate()?;
        }
        Ok(RuleEngine {
            rules,
            episodes: HashMap::new(),
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    /// Feeds one reading through every rule whose filter matches the topic
    /// and whose predicate source matches the reading.
    pub fn evaluate(
        &mut self,
        topic: &str,
        twin: &TwinId,
        reading: &TelemetryReading,
    ) -> Vec<RuleOutcome> {
        let mut outcomes = Vec::new();
        for (idx, rule) in self.rules.iter().enumerate() {
            if rule.predicate.source != reading.source || !rule.filter.matches(topic) {
                continue;
            }
            let episode = self
                .episodes
                .entry((idx, twin.clone()))
                .or_default();
            let holds = rule
                .predicate
                .comparator
                .holds(reading.value, rule.predicate.threshold);
            if !holds {
                *episode = Episode::default();
                continue;
            }
            let first = *episode
                .first_violation_ms
                .get_or_insert(reading.timestamp_ms);
            if episode.fired || reading.timestamp_ms < first + rule.sustain_ms {
                continue;
            }
            episode.fired = true;
            match &rule.action {
                RuleAction::RaiseAlarm {
                    severity,
                    message_template,
                } => {
                    let message = render_template(message_template, rule, reading);
                    outcomes.push(RuleOutcome::Alarm(AlarmEvent {
                        rule_id: rule.id.clone(),
                        node: reading.node,
                        source: reading.source,
                        first_violation_ms: first,
                        raised_ms: reading.timestamp_ms,
                        observed: reading.value,
                        severity: *severity,
                        message,
                    }));
                }
                RuleAction::SetTwinProperty { path, value_expr } => {
                    let value = match value_expr {
                        ValueExpr::ReadingValue => reading.value,
                        ValueExpr::Literal(v) => *v,
                    };
                    outcomes.push(RuleOutcome::SetProperty {
                        path: path.clone(),
                        value,
                    });
                }
            }
        }
        outcomes
    }
}

fn render_template(template: &str, rule: &Rule, reading: &TelemetryReading) -> String {
    template
        .replace("{rule}", &rule.id)
        .replace("{node}", &reading.node.to_string())
        .replace("{source}", reading.source.as_str())
        .replace("{value}", &reading.value.to_string())
        .replace("{threshold}", &rule.predicate.threshold.to_string())
}
