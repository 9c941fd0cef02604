//! MQTT-style topic names and subscription filters.
//!
//! `+` matches exactly one level; a terminal `#` matches the remainder of
//! the topic, including zero levels (`tms/#` matches `tms`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Segment {
    Literal(String),
    SingleLevel,
    MultiLevel,
}

/// A parsed subscription filter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicFilter {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TopicError {
    #[error("empty topic level in `{0}`")]
    EmptySegment(String),
    #[error("`#` must be the last level in `{0}`")]
    HashNotLast(String),
    #[error("wildcard must occupy a whole level in `{0}`")]
    EmbeddedWildcard(String),
    #[error("topic `{0}` may not contain wildcards")]
    WildcardInTopic(String),
}

impl TopicFilter {
    pub fn parse(filter: &str) -> Result<Self, TopicError> {
        let raw: Vec<&str> = filter.split('/').collect();
        let mut segments = Vec::with_capacity(raw.len());
        for (i, level) in raw.iter().enumerate() {
            let segment = match *level {
                "" => return Err(TopicError::EmptySegment(filter.to_string())),
                "+" => Segment::SingleLevel,
                "#" => {
                    if i + 1 != raw.len() {
                        return Err(TopicError::HashNotLast(filter.to_string()));
                    }
                    Segment::MultiLevel
                }
                other => {
                    if other.contains('+') || other.contains('#') {
                        return Err(TopicError::EmbeddedWildcard(filter.to_string()));
                    }
                    Segment::Literal(other.to_string())
                }
            };
            segments.push(segment);
        }
        Ok(TopicFilter { segments })
    }

    /// Standard MQTT matching against a concrete (wildcard-free) topic.
    pub fn matches(&self, topic: &str) -> bool {
        let levels: Vec<&str> = topic.split('/').collect();
        let mut li = 0;
        for (si, segment) in self.segments.iter().enumerate() {
            match segment {
                Segment::MultiLevel => {
                    // `#` also matches the parent level itself
                    debug_assert_eq!(si + 1, self.segments.len());
                    return li <= levels.len();
                }
                Segment::SingleLevel => {
                    if li >= levels.len() {
                        return false;
                    }
                    li += 1;
                }
                Segment::Literal(lit) => {
                    if li >= levels.len() || levels[li] != lit {
                        return false;
                    }
                    li += 1;
                }
            }
        }
        li == levels.len()
    }
}

impl fmt::Display for TopicFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, segment) in self.segments.iter().enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            match segment {
                Segment::Literal(s) => f.write_str(s)?,
                Segment::SingleLevel => f.write_str("+")?,
                Segment::MultiLevel => f.write_str("#")?,
            }
        }
        Ok(())
    }
}

impl FromStr for TopicFilter {
    type Err = TopicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopicFilter::parse(s)
    }
}

impl Serialize for TopicFilter {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TopicFilter {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks that a publish topic is concrete: non-empty levels, no wildcards.
pub fn validate_topic(topic: &str) -> Result<(), TopicError> {
    for level in topic.split('/') {
        if level.is_empty() {
            return Err(TopicError::EmptySegment(topic.to_string()));
        }
        if level.contains('+') || level.contains('#') {
            return Err(TopicError::WildcardInTopic(topic.to_string()));
        }
    }
    Ok(())
}

/// Splits a concrete topic into levels.
pub fn topic_levels(topic: &str) -> Vec<&str> {
    topic.split('/').collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matches(filter: &str, topic: &str) -> bool {
        TopicFilter::parse(filter).unwrap().matches(topic)
    }

    #[test]
    fn single_level_wildcard() {
        assert!(matches("tms/+/n1/inference", "tms/siteA/n1/inference"));
        assert!(!matches("tms/+/n1/inference", "tms/siteA/n2/inference"));
        assert!(!matches("tms/+/n1/inference", "tms/a/b/n1/inference"));
    }

    #[test]
    fn multi_level_wildcard_matches_zero_levels() {
        assert!(matches("tms/#", "tms"));
        assert!(matches("tms/#", "tms/a/b/c"));
        assert!(!matches("tms/#", "other/x"));
        assert!(matches("#", "anything/at/all"));
    }

    #[test]
    fn exact_literals() {
        assert!(matches("a/b", "a/b"));
        assert!(!matches("a/b", "a"));
        assert!(!matches("a", "a/b"));
    }

    #[test]
    fn invalid_filters_rejected() {
        assert!(TopicFilter::parse("a//b").is_err());
        assert!(TopicFilter::parse("a/#/b").is_err());
        assert!(TopicFilter::parse("a/b#").is_err());
        assert!(TopicFilter::parse("a/+b").is_err());
        assert!(TopicFilter::parse("").is_err());
    }

    #[test]
    fn filter_display_round_trips() {
        for s in ["tms/+/n1/#", "a/b/c", "+", "#"] {
            assert_eq!(TopicFilter::parse(s).unwrap().to_string(), s);
        }
    }

    #[test]
    fn concrete_topic_validation() {
        assert!(validate_topic("tms/siteA/n1/inference").is_ok());
        assert!(validate_topic("tms/$alarms").is_ok());
        assert!(validate_topic("tms//x").is_err());
        assert!(validate_topic("tms/+/x").is_err());
    }

    /// Brute-force matcher built on regex translation; the independent
    /// oracle for exhaustive equivalence checks.
    fn oracle_matches(filter: &str, topic: &str) -> bool {
        let mut pattern = String::from("^");
        let levels: Vec<&str> = filter.split('/').collect();
        for (i, level) in levels.iter().enumerate() {
            match *level {
                "#" => {
                    // strip the preceding separator: `#` may match zero levels
                    if pattern.ends_with('/') {
                        pattern.pop();
                    }
                    pattern.push_str("(/.*)?" );
                    if i == 0 {
                        pattern = String::from("^.*");
                    }
                    break;
                }
                "+" => pattern.push_str("[^/]+"),
                lit => pattern.push_str(&regex::escape(lit)),
            }
            if i + 1 != levels.len() {
                pattern.push('/');
            }
        }
        pattern.push('$');
        regex::Regex::new(&pattern).unwrap().is_match(topic)
    }

    #[test]
    fn exhaustive_agreement_with_oracle() {
        // all topics of 1..=4 levels over {a, b}
        let mut topics = Vec::new();
        let alphabet = ["a", "b"];
        for len in 1..=4usize {
            let mut stack = vec![String::new()];
            for _ in 0..len {
                let mut next = Vec::new();
                for prefix in &stack {
                    for symbol in alphabet {
                        let mut s = prefix.clone();
                        if !s.is_empty() {
                            s.push('/');
                        }
                        s.push_str(symbol);
                        next.push(s);
                    }
                }
                stack = next;
            }
            topics.extend(stack);
        }
        // all filters of 1..=4 levels over {a, b, +} with optional terminal #
        let mut filters = Vec::new();
        let symbols = ["a", "b", "+"];
        for len in 1..=4usize {
            let mut stack = vec![String::new()];
            for _ in 0..len {
                let mut next = Vec::new();
                for prefix in &stack {
                    for symbol in symbols {
                        let mut s = prefix.clone();
                        if !s.is_empty() {
                            s.push('/');
                        }
                        s.push_str(symbol);
                        next.push(s);
                    }
                }
                stack = next;
            }
            for f in &stack {
                filters.push(f.clone());
                if len < 4 {
                    filters.push(format!("{f}/#"));
                }
            }
        }
        filters.push("#".to_string());

        let mut checked = 0u64;
        for filter in &filters {
            let parsed = TopicFilter::parse(filter).unwrap();
            for topic in &topics {
                assert_eq!(
                    parsed.matches(topic),
                    oracle_matches(filter, topic),
                    "disagreement on filter `{filter}` topic `{topic}`"
                );
                checked += 1;
            }
        }
        assert!(checked > 4000);
    }
}
