//! Chat-completion client that asks a language model for maintain/change feedback.

use super::{apply_feedback, judge, Directive, Feedback, JudgmentRule, ReflectionContext, Reflector};
use crate::error::{invalid_arg, Error, Result};
use crate::mdp::{TabularMdp, Trajectory};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteReflectorConfig {
    /// Full URL of the chat-completion route.
    pub endpoint: String,
    pub model: String,
    pub template_path: PathBuf,
    pub timeout_ms: u64,
    /// Name of the environment variable holding the bearer token. Empty disables auth.
    pub credential_env: String,
    pub eta: f64,
    /// Optional JSON-lines log of prompts and replies.
    pub transcript: Option<PathBuf>,
}

impl Default for RemoteReflectorConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            template_path: PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/assets/reflector_prompt.txt")),
            timeout_ms: 30_000,
            credential_env: "RICL_API_KEY".into(),
            eta: 2.0,
            transcript: None,
        }
    }
}

impl RemoteReflectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint.trim().is_empty() {
            return Err(Error::Config("remote reflector endpoint is empty".into()));
        }
        if self.template_path.as_os_str().is_empty() {
            return Err(Error::Config("remote reflector template path is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("remote reflector timeout must be positive".into()));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

/// Text rendering of the hindsight slice that starts at step `t`.
pub fn render_hindsight(mdp: &TabularMdp, traj: &Trajectory, t: usize) -> Result<String> {
    if t >= traj.len() {
        return Err(invalid_arg(format!("step {t} outside trajectory of length {}", traj.len())));
    }
    let mut out = String::new();
    for (k, step) in traj.steps.iter().enumerate().skip(t) {
        out.push_str(&format!(
            "step {k}: state {} | action {} | reward {}\n",
            mdp.state_label(step.state),
            mdp.action_label(step.action),
            step.reward
        ));
    }
    let end = if traj.truncated { "time limit reached" } else { "episode finished" };
    out.push_str(&format!("final state {} ({end})", mdp.state_label(traj.final_state)));
    Ok(out)
}

/// Extracts the directive from a model reply. Looks at the text after the last "Feedback"
/// heading when there is one.
pub fn parse_reply(raw: &str) -> Result<Directive> {
    let lower = raw.to_lowercase();
    let section = match lower.rfind("feedback") {
        Some(i) => &lower[i..],
        None => &lower[..],
    };
    let fail = |message: &str| Error::Parse { message: message.into(), raw: raw.to_string() };
    if section.trim().is_empty() {
        return Err(fail("empty reply"));
    }
    let pick = |keep: bool, change: bool| match (keep, change) {
        (true, false) => Some(Directive::Maintain),
        (false, true) => Some(Directive::Change),
        _ => None,
    };
    let phrase = pick(
        section.contains("maintain the selected action"),
        section.contains("change the selected action"),
    );
    let word = pick(section.contains("maintain"), section.contains("change"));
    phrase
        .or(word)
        .ok_or_else(|| fail("reply does not contain exactly one of maintain/change"))
}

pub struct RemoteReflector {
    config: RemoteReflectorConfig,
    template: String,
    agent: ureq::Agent,
    transcript: Option<Mutex<File>>,
}

impl RemoteReflector {
    pub fn new(config: RemoteReflectorConfig) -> Result<Self> {
        config.validate()?;
        let template = std::fs::read_to_string(&config.template_path).map_err(|e| {
            Error::Config(format!("cannot read template {}: {e}", config.template_path.display()))
        })?;
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build();
        let transcript = match &config.transcript {
            Some(path) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?)),
            None => None,
        };
        Ok(Self { agent: ureq::Agent::new_with_config(agent_config), template, transcript, config })
    }

    pub fn prompt(&self, mdp: &TabularMdp, traj: &Trajectory, t: usize) -> Result<String> {
        let slice = render_hindsight(mdp, traj, t)?;
        let step = traj.steps[t];
        Ok(self
            .template
            .replace("{trajectory}", &slice)
            .replace("{step}", &t.to_string())
            .replace("{state}", mdp.state_label(step.state))
            .replace("{action}", mdp.action_label(step.action)))
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = self.agent.post(&self.config.endpoint);
        if !self.config.credential_env.is_empty() {
            if let Ok(token) = std::env::var(&self.config.credential_env) {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let mut response = request.send_json(&body).map_err(|e| Error::Transport(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let reply: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { message: format!("response is not JSON: {e}"), raw: text.clone() })?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::Parse { message: "response has no message content".into(), raw: text })
    }

    fn log(&self, traj: &Trajectory, t: usize, prompt: &str, reply: &str) -> Result<()> {
        if let Some(file) = &self.transcript {
            let line = json!({
                "start_state": traj.steps[0].state,
                "step": t,
                "prompt": prompt,
                "reply": reply,
            });
            let mut f = file.lock().unwrap_or_else(|p| p.into_inner());
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    /// Asks the model about step `t`. `true_label_correct` is filled from `ctx.values` with the
    /// argmax rule so remote verdicts can be scored against the exact answer.
    pub fn reflect(&self, ctx: &ReflectionContext<'_>, traj: &Trajectory, t: usize) -> Result<Feedback> {
        let prompt = self.prompt(ctx.mdp, traj, t)?;
        let reply = self.complete(&prompt)?;
        self.log(traj, t, &prompt, &reply)?;
        let directive = parse_reply(&reply)?;
        let step = traj.steps[t];
        Ok(Feedback {
            state: step.state,
            referenced_action: step.action,
            directive,
            true_label_correct: judge(JudgmentRule::ArgmaxAdvantage, ctx.values.a_row(step.state), step.action),
        })
    }
}

impl Reflector for RemoteReflector {
    fn updated_distribution(
        &self,
        ctx: &ReflectionContext<'_>,
        traj: &Trajectory,
        t: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>> {
        let fb = self.reflect(ctx, traj, t)?;
        apply_feedback(ctx.policy, &fb, self.config.eta)
    }
}
