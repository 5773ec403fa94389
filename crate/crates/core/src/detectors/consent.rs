//! Consent-screen checks. Whether a person would notice where the code goes
//! is a UI question, so the scanner prepares links and a checklist and either
//! asks the operator or applies plain HTML assertions.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::active::{ProbeContext, ScannerClient};
use super::{Evidence, Finding, Verdict};
use crate::oauth::{generate_pkce, AgentOutcome, PkceMethod};
use crate::taxonomy::{EvidenceLevel, FlawId};

/// Questions put to the operator, in the order of [`ConsentAnswers`] fields.
pub const CHECKLIST: [&str; 3] = [
    "Was a consent page shown before the redirect?",
    "Did the consent page display the full redirect_uri?",
    "For a localhost redirect_uri, did the page warn about it?",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentAnswers {
    pub consent_page_shown: bool,
    pub redirect_uri_displayed: bool,
    pub localhost_warning_displayed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "answers")]
pub enum ConsentMode {
    /// Emit the test links and report `needs_human`.
    BundleOnly,
    /// Print the checklist and read yes/no answers from stdin.
    Interactive,
    /// Answers collected earlier, e.g. from a file.
    Recorded(ConsentAnswers),
    /// Look for the redirect_uri in the consent page HTML.
    HtmlAssertions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestLink {
    pub label: String,
    pub url: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestLinkBundle {
    pub target: String,
    pub redirect_uri: String,
    pub links: Vec<TestLink>,
}

impl TestLinkBundle {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "# Consent check for {}\n\nExpected redirect_uri: `{}`\n\n",
            self.target, self.redirect_uri
        );
        for l in &self.links {
            out.push_str(&format!("- [{}]({})  \n  {}\n", l.label, l.url, l.note));
        }
        out.push_str("\nChecklist:\n\n");
        for q in CHECKLIST {
            out.push_str(&format!("- [ ] {q}\n"));
        }
        out
    }
}

pub fn judge_consent_answers(a: &ConsentAnswers) -> (Verdict, String) {
    if !a.consent_page_shown {
        return (Verdict::Vulnerable, "no consent page was shown".into());
    }
    if !a.redirect_uri_displayed {
        return (
            Verdict::Vulnerable,
            "consent page does not display the redirect_uri".into(),
        );
    }
    let warn = if a.localhost_warning_displayed {
        "with a localhost warning"
    } else {
        "without a localhost warning"
    };
    (
        Verdict::Secure,
        format!("consent page displays the redirect_uri, {warn}"),
    )
}

fn html_escaped(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Applies the checklist mechanically to a consent page.
pub fn judge_consent_html(html: &str, redirect_uri: &str) -> (Verdict, ConsentAnswers, String) {
    let lower = html.to_ascii_lowercase();
    let answers = ConsentAnswers {
        consent_page_shown: true,
        redirect_uri_displayed: html.contains(redirect_uri) || html.contains(&html_escaped(redirect_uri)),
        localhost_warning_displayed: lower.contains("localhost"),
    };
    let (v, d) = judge_consent_answers(&answers);
    (v, answers, d)
}

fn ask(questions: &[&str]) -> std::io::Result<Vec<bool>> {
    let stdin = std::io::stdin();
    let mut err = std::io::stderr();
    let mut out = Vec::new();
    for q in questions {
        loop {
            write!(err, "{q} [y/n] ")?;
            err.flush()?;
            let mut line = String::new();
            if stdin.lock().read_line(&mut line)? == 0 {
                return Err(std::io::ErrorKind::UnexpectedEof.into());
            }
            match line.trim().to_ascii_lowercase().as_str() {
                "y" | "yes" => break out.push(true),
                "n" | "no" => break out.push(false),
                _ => continue,
            }
        }
    }
    Ok(out)
}

/// Walks the scanner's own authorization up to the consent page, builds the
/// test link bundle and judges the page according to `mode`.
pub async fn assist_f6_consent(
    ctx: &ProbeContext<'_>,
    client: Option<&ScannerClient>,
    mode: &ConsentMode,
) -> (Finding, Option<TestLinkBundle>) {
    let finding =
        |v, d: String| Finding::new(FlawId::F6, EvidenceLevel::UiAssisted, v, &ctx.target, d);
    let Some(client) = client else {
        return (
            finding(Verdict::Inconclusive, "no scanner-owned client available".into()),
            None,
        );
    };
    let redirect = client.redirect_uri.clone();
    let pkce = generate_pkce(PkceMethod::S256);
    let start = ctx
        .authorization(&client.registration.client_id, &redirect)
        .with_pkce(pkce.challenge, "S256")
        .to_url();
    let mut links = vec![TestLink {
        label: "Start authorization".into(),
        url: start.clone(),
        note: "Open in a browser and inspect the consent step.".into(),
    }];
    let mut e = Evidence::default();

    let mut page = None;
    if !ctx.budget.dry_run {
        let http = ctx.client_for("f6");
        match ctx.agent(false).run(&http, &start, std::slice::from_ref(&redirect)).await {
            Ok(run) => {
                e.steps(&run.transcript);
                match run.outcome {
                    AgentOutcome::Page {
                        url,
                        body,
                        consent_form: true,
                        ..
                    } => {
                        links.push(TestLink {
                            label: "Consent page (mid-flow)".into(),
                            url: url.clone(),
                            note: "The consent page this flow reached; deny after inspecting.".into(),
                        });
                        page = Some(body);
                    }
                    AgentOutcome::Callback { code: Some(_), .. } => {
                        e.refs(ctx.refs_for("f6"));
                        let bundle = TestLinkBundle {
                            target: ctx.target.clone(),
                            redirect_uri: redirect,
                            links,
                        };
                        return (
                            finding(
                                Verdict::Vulnerable,
                                "authorization code issued without any consent step".into(),
                            )
                            .with_evidence(e),
                            Some(bundle),
                        );
                    }
                    other => e.note(format!("walk ended without a consent form: {other:?}").chars().take(300).collect::<String>()),
                }
            }
            Err(err) => e.note(format!("authorization walk failed: {err}")),
        }
        e.refs(ctx.refs_for("f6"));
    }
    let bundle = TestLinkBundle {
        target: ctx.target.clone(),
        redirect_uri: redirect.clone(),
        links,
    };

    let (verdict, detail) = match mode {
        ConsentMode::BundleOnly => (
            Verdict::NeedsHuman,
            "consent page needs a human check; see the test link bundle".into(),
        ),
        ConsentMode::Recorded(a) => judge_consent_answers(a),
        ConsentMode::HtmlAssertions => match &page {
            Some(html) => {
                let (v, _, d) = judge_consent_html(html, &redirect);
                (v, d)
            }
            None => (Verdict::Inconclusive, "no consent page reached".into()),
        },
        ConsentMode::Interactive => {
            eprintln!("{}", bundle.to_markdown());
            match tokio::task::spawn_blocking(|| ask(&CHECKLIST)).await {
                Ok(Ok(v)) => judge_consent_answers(&ConsentAnswers {
                    consent_page_shown: v[0],
                    redirect_uri_displayed: v[1],
                    localhost_warning_displayed: v[2],
                }),
                _ => (Verdict::NeedsHuman, "operator answers unavailable".into()),
            }
        }
    };
    (finding(verdict, detail).with_evidence(e), Some(bundle))
}
