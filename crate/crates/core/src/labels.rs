//! Actions and the seven action–object relationship categories.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Sit,
    Run,
    Grasp,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Sit, Action::Run, Action::Grasp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Sit => "sit",
            Action::Run => "run",
            Action::Grasp => "grasp",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAction(s.to_string()))
    }
}

/// Relationship between an action and one object instance. The first two
/// are the positive/negative pair; the remaining five are exceptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relationship {
    Positive,
    FirmlyNegative,
    ObjectNonFunctional,
    PhysicalObstacle,
    SociallyAwkward,
    SociallyForbidden,
    Dangerous,
}

pub const NUM_RELATIONSHIPS: usize = 7;

impl Relationship {
    pub const ALL: [Relationship; NUM_RELATIONSHIPS] = [
        Relationship::Positive,
        Relationship::FirmlyNegative,
        Relationship::ObjectNonFunctional,
        Relationship::PhysicalObstacle,
        Relationship::SociallyAwkward,
        Relationship::SociallyForbidden,
        Relationship::Dangerous,
    ];

    pub const EXCEPTIONS: [Relationship; 5] = [
        Relationship::ObjectNonFunctional,
        Relationship::PhysicalObstacle,
        Relationship::SociallyAwkward,
        Relationship::SociallyForbidden,
        Relationship::Dangerous,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_exception(self) -> bool {
        !matches!(self, Relationship::Positive | Relationship::FirmlyNegative)
    }

    /// Index in the 3-way scheme {positive, firmly negative, exception}.
    pub fn collapsed_index(self) -> usize {
        self.index().min(2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Relationship::Positive => "positive",
            Relationship::FirmlyNegative => "firmly_negative",
            Relationship::ObjectNonFunctional => "object_non_functional",
            Relationship::PhysicalObstacle => "physical_obstacle",
            Relationship::SociallyAwkward => "socially_awkward",
            Relationship::SociallyForbidden => "socially_forbidden",
            Relationship::Dangerous => "dangerous",
        }
    }
}

impl fmt::Display for Relationship {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_and_collapse() {
        for (i, r) in Relationship::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(Relationship::from_index(i), Some(*r));
        }
        assert_eq!(Relationship::Positive.collapsed_index(), 0);
        assert_eq!(Relationship::FirmlyNegative.collapsed_index(), 1);
        assert!(Relationship::EXCEPTIONS
            .iter()
            .all(|r| r.collapsed_index() == 2 && r.is_exception()));
        assert_eq!("grasp".parse::<Action>().unwrap(), Action::Grasp);
        assert!("fly".parse::<Action>().is_err());
    }
}
