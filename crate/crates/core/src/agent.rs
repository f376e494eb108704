//! Shared plumbing for the agents: template rendering, one gateway round
//! trip per call, and an optional transcript of every exchange.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::gateway::{AgentTag, ChatRequest, ChatResponse, Gateway, GatewayError, Message, TemplateStore};
use crate::sandbox::ExecutionOutcome;

/// Template file names (without extension) used by the agents.
pub mod templates {
    pub const SELF_REFLECTION: &str = "self_reflection";
    pub const RATIONALE: &str = "rationale";
    pub const SUMMARIZE: &str = "summarize";
    pub const CODING: &str = "coding";
    pub const DEBUGGER: &str = "debugger";
    pub const REPROMPT: &str = "reprompt";

    pub const ALL: [&str; 6] = [SELF_REFLECTION, RATIONALE, SUMMARIZE, CODING, DEBUGGER, REPROMPT];
}

/// Backend and sampling settings shared by every agent in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub backend_id: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            backend_id: "openai".into(),
            model_id: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

/// One entry of a per-problem transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEvent {
    Chat {
        step_index: Option<u32>,
        agent: AgentTag,
        template: String,
        replay_key: String,
        messages: Vec<Message>,
        response: ChatResponse,
    },
    Execution {
        step_index: u32,
        attempt: usize,
        code: String,
        outcome: ExecutionOutcome,
    },
    Note {
        step_index: Option<u32>,
        message: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn push(&mut self, event: TranscriptEvent) {
        self.events.push(event);
    }

    pub fn note(&mut self, step_index: Option<u32>, message: impl Into<String>) {
        self.events.push(TranscriptEvent::Note { step_index, message: message.into() });
    }

    /// Chat events issued by one agent.
    pub fn chats(&self, agent: AgentTag) -> impl Iterator<Item = (&[Message], &ChatResponse)> {
        self.events.iter().filter_map(move |e| match e {
            TranscriptEvent::Chat { agent: a, messages, response, .. } if *a == agent => {
                Some((messages.as_slice(), response))
            }
            _ => None,
        })
    }

    pub fn executions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TranscriptEvent::Execution { .. }))
            .count()
    }

    /// JSON Lines rendering, one event per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

pub type Bindings = HashMap<&'static str, String>;

/// Everything an agent needs to talk to the model.
#[derive(Clone, Copy)]
pub struct AgentRuntime<'a> {
    pub gateway: &'a Gateway,
    pub templates: &'a TemplateStore,
    pub settings: &'a LlmSettings,
}

impl<'a> AgentRuntime<'a> {
    pub fn new(gateway: &'a Gateway, templates: &'a TemplateStore, settings: &'a LlmSettings) -> Self {
        AgentRuntime { gateway, templates, settings }
    }

    pub fn render(&self, template: &str, bindings: &Bindings) -> Result<Vec<Message>, GatewayError> {
        self.templates.render(template, bindings)
    }

    /// Sends `messages` and logs the exchange.
    pub fn chat(
        &self,
        agent: AgentTag,
        template: &str,
        step_index: Option<u32>,
        messages: Vec<Message>,
        transcript: &mut Transcript,
    ) -> Result<ChatResponse, GatewayError> {
        let request = ChatRequest::new(
            self.settings.backend_id.clone(),
            self.settings.model_id.clone(),
            messages,
            self.settings.temperature,
            self.settings.max_tokens,
            agent,
        )?;
        let response = self.gateway.complete(&request)?;
        transcript.push(TranscriptEvent::Chat {
            step_index,
            agent,
            template: template.to_string(),
            replay_key: request.replay_key(),
            messages: request.messages,
            response: response.clone(),
        });
        Ok(response)
    }

    /// Continues a conversation with a corrective user turn rendered from
    /// the re-prompt template.
    pub fn reprompt_messages(
        &self,
        mut messages: Vec<Message>,
        previous: &str,
        reason: &str,
    ) -> Result<Vec<Message>, GatewayError> {
        let mut bindings = Bindings::new();
        bindings.insert("REASON", reason.to_string());
        messages.push(Message::assistant(previous));
        messages.extend(self.render(templates::REPROMPT, &bindings)?);
        Ok(messages)
    }
}
