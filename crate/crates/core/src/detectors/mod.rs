//! Flaw detectors: passive rules over reconstructed lifecycles, active probes
//! against the authorization server, and operator-assisted consent checks.

mod active;
mod catcher;
mod consent;
mod passive;

use serde::{Deserialize, Serialize};

use crate::oauth::TranscriptStep;
use crate::taxonomy::{Category, EvidenceLevel, FlawId};

pub use active::{
    probe_f1_malicious_dcr, probe_f2_blind_client_trust, probe_f4_nested_pollution,
    probe_f5_downgrade, probe_f7_open_redirect, probe_f9_code_replay, proceeds, ProbeContext,
    ReplayableToken, ScannerClient, PROBE_REDIRECT_URI,
};
pub use catcher::{run_callback_catcher, CallbackCatcher, CatcherError, CaughtRequest};
pub use consent::{
    assist_f6_consent, judge_consent_answers, judge_consent_html, ConsentAnswers, ConsentMode,
    TestLink, TestLinkBundle, CHECKLIST,
};
pub(crate) use passive::{check_f5_lifecycles as passive_f5, pick as passive_pick};
pub use passive::{check_f3_layer_inconsistency, check_f5_passive, check_f8_weak_state, state_entropy_bits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Vulnerable,
    Secure,
    Inconclusive,
    NeedsHuman,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Sequence numbers of recorded exchanges, ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchange_refs: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcript: Vec<TranscriptStep>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Evidence {
    pub fn note(&mut self, n: impl Into<String>) {
        self.notes.push(n.into());
    }

    pub fn refs(&mut self, refs: impl IntoIterator<Item = u64>) {
        self.exchange_refs.extend(refs);
        self.exchange_refs.sort_unstable();
        self.exchange_refs.dedup();
    }

    pub fn steps(&mut self, steps: &[TranscriptStep]) {
        self.refs(steps.iter().filter_map(|s| s.exchange_ref));
        self.transcript.extend_from_slice(steps);
    }

    pub fn merge(&mut self, other: Evidence) {
        self.refs(other.exchange_refs);
        self.transcript.extend(other.transcript);
        self.notes.extend(other.notes);
    }
}

/// Outcome of one probe variant inside a finding, such as the strip and plain
/// PKCE downgrades.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubResult {
    pub variant: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub flaw: FlawId,
    pub category: Category,
    pub evidence_level: EvidenceLevel,
    pub verdict: Verdict,
    /// Verdict from partial evidence that a stronger check could still overturn.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub provisional: bool,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_results: Vec<SubResult>,
    #[serde(default)]
    pub evidence: Evidence,
    /// URL of the MCP endpoint the finding belongs to.
    pub target: String,
}

impl Finding {
    /// # Panics
    /// If `level` is not an evidence level `flaw` can carry.
    pub fn new(
        flaw: FlawId,
        level: EvidenceLevel,
        verdict: Verdict,
        target: &str,
        detail: impl Into<String>,
    ) -> Self {
        assert!(flaw.permits(level), "{flaw} cannot carry {level} evidence");
        Self {
            flaw,
            category: flaw.category(),
            evidence_level: level,
            verdict,
            provisional: false,
            detail: detail.into(),
            sub_results: vec![],
            evidence: Evidence::default(),
            target: target.to_string(),
        }
    }

    pub fn with_evidence(mut self, e: Evidence) -> Self {
        self.evidence.merge(e);
        self
    }

    pub fn is_vulnerable(&self) -> bool {
        self.verdict == Verdict::Vulnerable
    }
}

/// Combines sub-results: any vulnerable wins, then inconclusive, then secure.
pub fn aggregate(results: &[SubResult]) -> Verdict {
    let has = |v| results.iter().any(|r| r.verdict == v);
    if has(Verdict::Vulnerable) {
        Verdict::Vulnerable
    } else if has(Verdict::Inconclusive) || results.is_empty() {
        Verdict::Inconclusive
    } else if has(Verdict::NeedsHuman) {
        Verdict::NeedsHuman
    } else {
        Verdict::Secure
    }
}

/// One F5 finding from the passive and active results, at the stronger evidence level.
pub fn merge_f5(passive: Option<Finding>, active: Option<Finding>) -> Option<Finding> {
    match (passive, active) {
        (p, None) => p,
        (None, a) => a,
        (Some(p), Some(mut a)) => {
            if p.verdict == Verdict::Vulnerable && a.verdict != Verdict::Vulnerable {
                a.detail = format!("{} (active probe: {})", p.detail, a.detail);
                a.verdict = Verdict::Vulnerable;
            }
            a.provisional = false;
            a.sub_results.push(SubResult {
                variant: "observed".into(),
                verdict: p.verdict,
                detail: p.detail,
            });
            a.evidence.merge(p.evidence);
            Some(a)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeBudget {
    pub max_redirect_hops: u32,
    /// Upper bound on mutated authorization attempts per flaw.
    pub max_probes_per_flaw: u32,
    /// Report every active probe as inconclusive without sending anything.
    pub dry_run: bool,
}

impl Default for ProbeBudget {
    fn default() -> Self {
        Self {
            max_redirect_hops: 5,
            max_probes_per_flaw: 4,
            dry_run: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(v: Verdict) -> SubResult {
        SubResult {
            variant: "x".into(),
            verdict: v,
            detail: String::new(),
        }
    }

    #[test]
    fn aggregation_order() {
        use Verdict::*;
        assert_eq!(aggregate(&[sub(Secure), sub(Vulnerable)]), Vulnerable);
        assert_eq!(aggregate(&[sub(Secure), sub(Inconclusive)]), Inconclusive);
        assert_eq!(aggregate(&[sub(Secure), sub(Secure)]), Secure);
        assert_eq!(aggregate(&[]), Inconclusive);
    }

    #[test]
    #[should_panic]
    fn evidence_level_is_enforced() {
        Finding::new(FlawId::F3, EvidenceLevel::Active, Verdict::Secure, "t", "");
    }

    #[test]
    fn f5_merge_takes_active_level() {
        let mut p = Finding::new(FlawId::F5, EvidenceLevel::Passive, Verdict::Secure, "t", "S256 seen");
        p.provisional = true;
        let a = Finding::new(FlawId::F5, EvidenceLevel::Active, Verdict::Vulnerable, "t", "strip");
        let m = merge_f5(Some(p.clone()), Some(a)).unwrap();
        assert_eq!(m.evidence_level, EvidenceLevel::Active);
        assert_eq!(m.verdict, Verdict::Vulnerable);
        assert!(!m.provisional);
        assert_eq!(merge_f5(Some(p.clone()), None).unwrap(), p);
    }
}
