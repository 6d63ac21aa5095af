//! Conversion between rollout transcripts and chat-completions messages.
//!
//! Calls made in one agent step become a single assistant message carrying
//! `tool_calls` (ids `call_k`, numbered across the transcript), followed by
//! one `tool` message per call. With metadata enabled, every chat message
//! and wire call also carries `turn` and `tokens`, and tool messages carry
//! the structured `result`, which makes the conversion invertible.

use serde_json::{json, Map, Value};

use super::wire::{ChatMessage, ChatRole, WireToolCall};
use super::ClientError;
use crate::env::ToolResult;
use crate::rollout::{approx_tokens, Body, Message, Role};

fn meta(m: &Message) -> Map<String, Value> {
    let mut extra = Map::new();
    extra.insert("turn".into(), json!(m.turn_index));
    extra.insert("tokens".into(), json!(m.token_count));
    extra
}

/// Renders `messages` in chat form; see the module docs for `with_meta`.
pub fn chat_transcript(messages: &[Message], with_meta: bool) -> Vec<ChatMessage> {
    let tag = |mut c: ChatMessage, m: &Message| {
        if with_meta {
            c.extra = meta(m);
        }
        c
    };
    let mut out = Vec::new();
    let mut call_seq = 0usize;
    let mut i = 0;
    while i < messages.len() {
        let m = &messages[i];
        match m.role() {
            Role::System => out.push(tag(ChatMessage::system(m.text().unwrap_or_default()), m)),
            Role::User => out.push(tag(ChatMessage::user(m.text().unwrap_or_default()), m)),
            Role::AgentText => out.push(tag(ChatMessage::assistant(m.text().unwrap_or_default()), m)),
            Role::ToolCall | Role::ToolResult => {
                let turn = m.turn_index;
                let mut calls = Vec::new();
                let mut results = Vec::new();
                while i < messages.len()
                    && messages[i].turn_index == turn
                    && matches!(messages[i].role(), Role::ToolCall | Role::ToolResult)
                {
                    let cur = &messages[i];
                    if let Some(c) = cur.tool_call() {
                        let mut wire = WireToolCall::from_call(format!("call_{call_seq}"), c);
                        call_seq += 1;
                        if with_meta {
                            wire.extra = meta(cur);
                        }
                        calls.push(wire);
                    } else if let Some(r) = cur.tool_result() {
                        let id = calls.last().map(|c| c.id.clone()).unwrap_or_default();
                        let mut msg = tag(ChatMessage::tool(id, r.to_content()), cur);
                        if with_meta {
                            msg.extra.insert(
                                "result".into(),
                                serde_json::to_value(r).expect("results serialize"),
                            );
                        }
                        results.push(msg);
                    }
                    i += 1;
                }
                out.push(ChatMessage::assistant_calls(calls));
                out.extend(results);
                continue;
            }
        }
        i += 1;
    }
    out
}

fn read_meta(extra: &Map<String, Value>, fallback_tokens: usize) -> (usize, usize) {
    let get = |k: &str| extra.get(k).and_then(Value::as_u64).map(|v| v as usize);
    (get("turn").unwrap_or(0), get("tokens").unwrap_or(fallback_tokens))
}

/// Inverse of [`chat_transcript`]. Without metadata, turns default to 0,
/// token counts to the approximate count, and tool results to a successful
/// payload parsed from the content.
pub fn transcript_from_chat(chat: &[ChatMessage]) -> Result<Vec<Message>, ClientError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chat.len() {
        let c = &chat[i];
        let text = c.content.clone().unwrap_or_default();
        let (turn, tokens) = read_meta(&c.extra, approx_tokens(&text));
        match (c.role, &c.tool_calls) {
            (ChatRole::System, _) => out.push(Message::new(Body::System(text), turn, tokens)),
            (ChatRole::User, _) => out.push(Message::new(Body::User(text), turn, tokens)),
            (ChatRole::Assistant, None) => out.push(Message::new(Body::AgentText(text), turn, tokens)),
            (ChatRole::Assistant, Some(calls)) => {
                let mut answers: Vec<&ChatMessage> = Vec::new();
                while i + 1 < chat.len() && chat[i + 1].role == ChatRole::Tool {
                    i += 1;
                    answers.push(&chat[i]);
                }
                for wire in calls {
                    let call = wire.to_call()?;
                    let (turn, tokens) = read_meta(&wire.extra, approx_tokens(&wire.function.arguments));
                    out.push(Message::new(Body::ToolCall(call), turn, tokens));
                    let answer = answers
                        .iter()
                        .find(|a| a.tool_call_id.as_deref() == Some(wire.id.as_str()))
                        .ok_or_else(|| {
                            ClientError::Malformed(format!("tool call {} has no answer", wire.id))
                        })?;
                    out.push(tool_message(answer)?);
                }
            }
            (ChatRole::Tool, _) => {
                return Err(ClientError::Malformed(format!(
                    "tool message {i} does not follow an assistant tool call"
                )))
            }
        }
        i += 1;
    }
    Ok(out)
}

fn tool_message(c: &ChatMessage) -> Result<Message, ClientError> {
    let text = c.content.clone().unwrap_or_default();
    let result = match c.extra.get("result") {
        Some(r) => serde_json::from_value(r.clone())
            .map_err(|e| ClientError::Malformed(format!("tool result: {e}")))?,
        None => ToolResult::Ok(serde_json::from_str(&text).unwrap_or(Value::String(text.clone()))),
    };
    let (turn, tokens) = read_meta(&c.extra, approx_tokens(&text));
    Ok(Message::new(Body::ToolResult(result), turn, tokens))
}
