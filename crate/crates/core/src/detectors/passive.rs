//! Rules that only read reconstructed traffic.

use std::collections::HashMap;

use super::{Evidence, Finding, Verdict};
use crate::capture::Layer;
use crate::lifecycle::{DelegatedChain, Lifecycle};
use crate::taxonomy::{EvidenceLevel, FlawId};

const MIN_STATE_LEN: usize = 8;
const MIN_STATE_BITS: f64 = 32.0;

fn lifecycle_evidence(lcs: &[&Lifecycle]) -> Evidence {
    let mut e = Evidence::default();
    for lc in lcs {
        e.refs(lc.exchange_refs());
    }
    e
}

pub fn check_f3_layer_inconsistency(chain: &DelegatedChain, target: &str) -> Finding {
    let finding = |v, d: &str| Finding::new(FlawId::F3, EvidenceLevel::Passive, v, target, d);
    let Some(l2) = &chain.l2 else {
        return finding(Verdict::Inconclusive, "no upstream flow linked to this authorization");
    };
    let mut e = lifecycle_evidence(&[&chain.l1, l2]);
    if let Some(basis) = chain.link_basis {
        e.note(format!("layers linked by {basis:?}"));
    }
    let Some(l2_auth) = &l2.auth_request else {
        return finding(Verdict::Inconclusive, "upstream authorization request not observed").with_evidence(e);
    };
    let l1_pkce = chain
        .l1
        .auth_request
        .as_ref()
        .is_some_and(|a| a.code_challenge.is_some());
    let l2_pkce = l2_auth.code_challenge.is_some();
    match (l1_pkce, l2_pkce) {
        (true, false) => finding(
            Verdict::Vulnerable,
            "client-facing flow uses PKCE but the upstream authorization request carries no code_challenge",
        ),
        (true, true) => finding(Verdict::Secure, "both layers send a code_challenge"),
        (false, _) => finding(
            Verdict::Inconclusive,
            "client-facing flow sends no code_challenge, so there is no enforcement to compare against",
        ),
    }
    .with_evidence(e)
}

fn is_plain(method: Option<&str>) -> bool {
    method.is_none_or(|m| m.eq_ignore_ascii_case("plain"))
}

pub fn check_f5_passive(lc: &Lifecycle, target: &str) -> Finding {
    let finding = |v, d: &str| Finding::new(FlawId::F5, EvidenceLevel::Passive, v, target, d);
    let Some(auth) = &lc.auth_request else {
        return finding(Verdict::Inconclusive, "authorization request not observed");
    };
    let e = lifecycle_evidence(&[lc]);
    let accepted = lc.callback.as_ref().is_some_and(|c| c.code.is_some());
    let weakness = match (&auth.code_challenge, auth.code_challenge_method.as_deref()) {
        (None, _) => Some("without a code_challenge"),
        (Some(_), m) if is_plain(m) => Some("with code_challenge_method=plain"),
        _ => None,
    };
    match (weakness, accepted) {
        (Some(w), true) => finding(
            Verdict::Vulnerable,
            &format!("authorization {w} was accepted and returned a code"),
        ),
        (Some(w), false) => finding(
            Verdict::Inconclusive,
            &format!("authorization request sent {w}; no callback observed"),
        ),
        (None, _) => {
            let mut f = finding(Verdict::Secure, "S256 code_challenge observed");
            f.provisional = true;
            f
        }
    }
    .with_evidence(e)
}

/// Runs [`check_f5_passive`] over client-facing lifecycles and keeps the strongest result.
pub(crate) fn check_f5_lifecycles(lcs: &[Lifecycle], target: &str) -> Option<Finding> {
    let findings: Vec<Finding> = lcs
        .iter()
        .filter(|l| l.layer != Layer::L2UpstreamDelegated && l.auth_request.is_some())
        .map(|l| check_f5_passive(l, target))
        .collect();
    pick(findings)
}

/// Vulnerable first, then secure, then anything else.
pub(crate) fn pick(findings: Vec<Finding>) -> Option<Finding> {
    let rank = |f: &Finding| match f.verdict {
        Verdict::Vulnerable => 0,
        Verdict::Secure => 1,
        Verdict::NeedsHuman => 2,
        Verdict::Inconclusive => 3,
    };
    findings.into_iter().min_by_key(rank)
}

/// Length times per-character entropy, capped by the alphabet the value appears to use.
pub fn state_entropy_bits(state: &str) -> f64 {
    let chars: Vec<char> = state.chars().collect();
    if chars.is_empty() {
        return 0.0;
    }
    let n = chars.len() as f64;
    let mut counts: HashMap<char, usize> = HashMap::new();
    for c in &chars {
        *counts.entry(*c).or_default() += 1;
    }
    let shannon: f64 = counts
        .values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.log2()
        })
        .sum();
    let alphabet = if chars.iter().all(|c| c.is_ascii_digit()) {
        10.0
    } else if chars.iter().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()) {
        16.0
    } else if chars.iter().all(|c| c.is_ascii_digit() || c.is_ascii_lowercase()) {
        36.0
    } else if chars.iter().all(|c| c.is_ascii_alphanumeric()) {
        62.0
    } else if chars.iter().all(|c| c.is_ascii_alphanumeric() || *c == '-' || *c == '_') {
        64.0
    } else {
        95.0
    };
    n * shannon.min(f64::log2(alphabet))
}

pub fn check_f8_weak_state(lcs: &[Lifecycle], target: &str) -> Finding {
    let with_req: Vec<&Lifecycle> = lcs.iter().filter(|l| l.auth_request.is_some()).collect();
    if with_req.is_empty() {
        return Finding::new(
            FlawId::F8,
            EvidenceLevel::Passive,
            Verdict::Inconclusive,
            target,
            "no authorization request observed",
        );
    }
    let mut e = lifecycle_evidence(&with_req);
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for lc in &with_req {
        if let Some(s) = lc.auth_request.as_ref().and_then(|a| a.state.as_deref()) {
            *seen.entry(s).or_default() += 1;
        }
    }
    let mut problems = Vec::new();
    for lc in &with_req {
        let auth = lc.auth_request.as_ref().expect("filtered above");
        let who = auth.endpoint.as_deref().unwrap_or("authorization endpoint");
        match auth.state.as_deref() {
            None => problems.push(format!("request to {who} carries no state")),
            Some(s) => {
                if seen.get(s).copied().unwrap_or(0) > 1 || lc.duplicate_state {
                    problems.push(format!("state `{s}` is reused across flows to {who}"));
                }
                if s.chars().count() < MIN_STATE_LEN {
                    problems.push(format!("state `{s}` to {who} is shorter than {MIN_STATE_LEN} characters"));
                } else {
                    let bits = state_entropy_bits(s);
                    if bits < MIN_STATE_BITS {
                        problems.push(format!("state `{s}` to {who} has an estimated {bits:.1} bits of entropy"));
                    }
                }
            }
        }
    }
    problems.dedup();
    if problems.is_empty() {
        Finding::new(
            FlawId::F8,
            EvidenceLevel::Passive,
            Verdict::Secure,
            target,
            format!("{} authorization request(s) with distinct, high-entropy state", with_req.len()),
        )
        .with_evidence(e)
    } else {
        for p in &problems[1..] {
            e.note(p.clone());
        }
        Finding::new(FlawId::F8, EvidenceLevel::Passive, Verdict::Vulnerable, target, problems[0].clone())
            .with_evidence(e)
    }
}
