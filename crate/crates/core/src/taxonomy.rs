//! Flaw taxonomy shared by the detectors, the flaw lab and reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The nine implementation flaw types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlawId {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
}

/// The four flaw categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    C1,
    C2,
    C3,
    C4,
}

/// How strong the evidence behind a finding is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceLevel {
    Passive,
    Active,
    UiAssisted,
}

impl FlawId {
    pub const ALL: [FlawId; 9] = [
        FlawId::F1,
        FlawId::F2,
        FlawId::F3,
        FlawId::F4,
        FlawId::F5,
        FlawId::F6,
        FlawId::F7,
        FlawId::F8,
        FlawId::F9,
    ];

    pub fn category(self) -> Category {
        match self {
            FlawId::F1 | FlawId::F2 => Category::C1,
            FlawId::F3 | FlawId::F4 => Category::C2,
            FlawId::F5 | FlawId::F6 => Category::C3,
            FlawId::F7 | FlawId::F8 | FlawId::F9 => Category::C4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlawId::F1 => "Malicious DCR Binding",
            FlawId::F2 => "Blind Client Trust",
            FlawId::F3 => "Layer Inconsistency",
            FlawId::F4 => "Nested Context Pollution",
            FlawId::F5 => "PKCE Downgrade",
            FlawId::F6 => "Consent Page Bypass",
            FlawId::F7 => "Open Redirect",
            FlawId::F8 => "Weak State",
            FlawId::F9 => "Code Replay",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FlawId::F1 => "Malicious redirect_uri registration via open endpoints.",
            FlawId::F2 => "client_id spoofing due to inadequate verification.",
            FlawId::F3 => "Inconsistent PKCE enforcement across architectural layers.",
            FlawId::F4 => "Hijacking codes via nested redirect_uri manipulation in state.",
            FlawId::F5 => "Missing or weakened PKCE enforcement.",
            FlawId::F6 => "Missing consent display enforcement.",
            FlawId::F7 => "Insufficient redirect_uri validation.",
            FlawId::F8 => "Missing or predictable state enables CSRF.",
            FlawId::F9 => "Reusable authorization code after login.",
        }
    }

    /// Workflow phases in which the flaw shows up.
    pub fn phases(self) -> &'static str {
        match self {
            FlawId::F1 => "P1-P2",
            FlawId::F2 | FlawId::F6 | FlawId::F7 | FlawId::F8 => "P2",
            FlawId::F3 | FlawId::F4 => "PA",
            FlawId::F5 => "P2-P3",
            FlawId::F9 => "P3",
        }
    }

    /// Whether a finding for this flaw may carry `level`.
    pub fn permits(self, level: EvidenceLevel) -> bool {
        match self {
            FlawId::F3 | FlawId::F8 => level == EvidenceLevel::Passive,
            FlawId::F5 => matches!(level, EvidenceLevel::Passive | EvidenceLevel::Active),
            FlawId::F1 | FlawId::F2 | FlawId::F4 | FlawId::F7 | FlawId::F9 => {
                level == EvidenceLevel::Active
            }
            FlawId::F6 => level == EvidenceLevel::UiAssisted,
        }
    }
}

impl Category {
    pub const ALL: [Category; 4] = [Category::C1, Category::C2, Category::C3, Category::C4];

    pub fn name(self) -> &'static str {
        match self {
            Category::C1 => "Dynamic Client Registration Flaws",
            Category::C2 => "Delegated Authorization Flaws",
            Category::C3 => "Open Client Environment Flaws",
            Category::C4 => "Common OAuth Misconfigurations",
        }
    }

    pub fn flaws(self) -> impl Iterator<Item = FlawId> {
        FlawId::ALL.into_iter().filter(move |f| f.category() == self)
    }
}

impl fmt::Display for FlawId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl EvidenceLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            EvidenceLevel::Passive => "passive",
            EvidenceLevel::Active => "active",
            EvidenceLevel::UiAssisted => "ui_assisted",
        }
    }
}

impl fmt::Display for EvidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown flaw id `{0}` (expected F1..F9)")]
pub struct UnknownFlaw(pub String);

impl FromStr for FlawId {
    type Err = UnknownFlaw;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_uppercase();
        FlawId::ALL
            .into_iter()
            .find(|f| f.to_string() == t)
            .ok_or_else(|| UnknownFlaw(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_mapping_matches_taxonomy() {
        let expected = [
            (FlawId::F1, Category::C1),
            (FlawId::F2, Category::C1),
            (FlawId::F3, Category::C2),
            (FlawId::F4, Category::C2),
            (FlawId::F5, Category::C3),
            (FlawId::F6, Category::C3),
            (FlawId::F7, Category::C4),
            (FlawId::F8, Category::C4),
            (FlawId::F9, Category::C4),
        ];
        for (flaw, cat) in expected {
            assert_eq!(flaw.category(), cat, "{flaw}");
        }
        assert_eq!(Category::C4.flaws().count(), 3);
    }

    #[test]
    fn evidence_levels_are_fixed_per_flaw() {
        use EvidenceLevel::*;
        assert!(FlawId::F3.permits(Passive) && !FlawId::F3.permits(Active));
        assert!(FlawId::F8.permits(Passive) && !FlawId::F8.permits(UiAssisted));
        assert!(FlawId::F5.permits(Passive) && FlawId::F5.permits(Active));
        assert!(!FlawId::F5.permits(UiAssisted));
        for f in [FlawId::F1, FlawId::F2, FlawId::F4, FlawId::F7, FlawId::F9] {
            assert!(f.permits(Active) && !f.permits(Passive), "{f}");
        }
        assert!(FlawId::F6.permits(UiAssisted) && !FlawId::F6.permits(Active));
    }

    #[test]
    fn parses_flaw_ids() {
        assert_eq!("f5".parse::<FlawId>().unwrap(), FlawId::F5);
        assert_eq!(" F9 ".parse::<FlawId>().unwrap(), FlawId::F9);
        assert!("F10".parse::<FlawId>().is_err());
    }
}
