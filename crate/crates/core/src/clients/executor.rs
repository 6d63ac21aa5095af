//! Remote tool execution over JSON-RPC 2.0 (`tools/list`, `tools/call`), in
//! the shape used by Model Context Protocol servers.

use std::sync::Mutex;

use serde_json::{json, Value};

use super::http::ChatClient;
use super::mock::{MockReply, MockServer};
use super::{ClientConfig, ClientError};
use crate::env::{DomainEnv, ToolCall, ToolResult, ToolSpec};
use crate::rollout::ToolBackend;

/// Tool backend that forwards every call to a remote executor. The tool
/// listing is fetched once, at connection time.
#[derive(Debug)]
pub struct RemoteToolExecutor {
    client: ChatClient,
    tools: Vec<ToolSpec>,
    next_id: u64,
}

impl RemoteToolExecutor {
    pub fn connect(cfg: ClientConfig) -> Result<Self, ClientError> {
        let mut ex = Self {
            client: ChatClient::new(cfg)?,
            tools: Vec::new(),
            next_id: 1,
        };
        let listing = ex.rpc("tools/list", json!({}))?;
        let tools = listing
            .get("tools")
            .and_then(Value::as_array)
            .ok_or_else(|| ClientError::Malformed("tools/list result has no tools".into()))?;
        ex.tools = tools.iter().map(spec_from_listing).collect::<Result<_, _>>()?;
        Ok(ex)
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    fn rpc(&mut self, method: &str, params: Value) -> Result<Value, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let body = json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params});
        let (text, _) = self.client.post_with_retries("", &body)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| ClientError::Malformed(e.to_string()))?;
        if let Some(err) = v.get("error") {
            return Err(ClientError::Malformed(format!("rpc error: {err}")));
        }
        v.get("result")
            .cloned()
            .ok_or_else(|| ClientError::Malformed("rpc response without result".into()))
    }

    /// Executes one call remotely; transport and protocol failures come back
    /// as error results the agent can see.
    pub fn call(&mut self, call: &ToolCall) -> ToolResult {
        match self.rpc(
            "tools/call",
            json!({"name": call.name, "arguments": call.arguments}),
        ) {
            Ok(result) => result_from_rpc(&result),
            Err(e) => ToolResult::Err(format!("Error: tool executor unavailable: {e}")),
        }
    }
}

fn spec_from_listing(v: &Value) -> Result<ToolSpec, ClientError> {
    let name = v
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| ClientError::Malformed("listed tool without a name".into()))?;
    let read_only = v
        .pointer("/annotations/readOnlyHint")
        .and_then(Value::as_bool)
        .unwrap_or(false);
    let side_channel = v
        .pointer("/annotations/sideChannel")
        .and_then(|s| serde_json::from_value(s.clone()).ok())
        .unwrap_or_default();
    Ok(ToolSpec {
        name: name.to_string(),
        description: v
            .get("description")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string(),
        parameters: v
            .get("inputSchema")
            .cloned()
            .unwrap_or_else(|| json!({"type": "object"})),
        mutating: !read_only,
        side_channel,
        handler: None,
    })
}

fn result_from_rpc(result: &Value) -> ToolResult {
    let text = result
        .pointer("/content/0/text")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if result.get("isError").and_then(Value::as_bool).unwrap_or(false) {
        return ToolResult::Err(text);
    }
    if let Some(v) = result.get("structuredContent") {
        return ToolResult::Ok(v.clone());
    }
    ToolResult::Ok(serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

impl ToolBackend for RemoteToolExecutor {
    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.tools.clone()
    }

    fn call(&mut self, call: &ToolCall) -> ToolResult {
        RemoteToolExecutor::call(self, call)
    }
}

/// Serves `tools` over JSON-RPC on a loopback port, answering each
/// `tools/call` with `call`.
pub fn executor_server(
    tools: Vec<ToolSpec>,
    call: impl Fn(&ToolCall) -> ToolResult + Send + Sync + 'static,
) -> Result<MockServer, ClientError> {
    let listing: Vec<Value> = tools
        .iter()
        .map(|s| {
            json!({
                "name": s.name,
                "description": s.description,
                "inputSchema": s.parameters,
                "annotations": {
                    "readOnlyHint": !s.mutating,
                    "sideChannel": s.side_channel,
                },
            })
        })
        .collect();
    MockServer::with_handler(move |_, req| {
        let id = req.get("id").cloned().unwrap_or(Value::Null);
        let reply = |result: Value| MockReply::Json(json!({"jsonrpc": "2.0", "id": id, "result": result}));
        match req.get("method").and_then(Value::as_str) {
            Some("tools/list") => reply(json!({"tools": listing})),
            Some("tools/call") => {
                let request = ToolCall::new(
                    req.pointer("/params/name")
                        .and_then(Value::as_str)
                        .unwrap_or_default(),
                    req.pointer("/params/arguments")
                        .cloned()
                        .unwrap_or_else(|| json!({})),
                );
                let result = call(&request);
                let text = result.to_content();
                match result {
                    ToolResult::Ok(v) => reply(json!({
                        "content": [{"type": "text", "text": text}],
                        "structuredContent": v,
                        "isError": false,
                    })),
                    ToolResult::Err(_) => reply(json!({
                        "content": [{"type": "text", "text": text}],
                        "isError": true,
                    })),
                }
            }
            _ => MockReply::Json(json!({
                "jsonrpc": "2.0",
                "id": id,
                "error": {"code": -32601, "message": "method not found"},
            })),
        }
    })
}

/// Serves `env` as a JSON-RPC tool executor on a loopback port.
pub fn mock_executor(env: DomainEnv) -> Result<MockServer, ClientError> {
    let tools = env.registry().specs().cloned().collect();
    let env = Mutex::new(env);
    executor_server(tools, move |call| env.lock().expect("env lock").execute(call))
}

/// Executor that expects exactly the calls in `script`, in order, and
/// answers each with its recorded result. Any other call gets an error
/// result naming the expected call.
pub fn replay_executor(
    tools: Vec<ToolSpec>,
    script: Vec<(ToolCall, ToolResult)>,
) -> Result<MockServer, ClientError> {
    let queue = Mutex::new(std::collections::VecDeque::from(script));
    executor_server(tools, move |call| {
        let mut queue = queue.lock().expect("replay lock");
        match queue.front() {
            Some((expected, _)) if expected == call => queue.pop_front().expect("front exists").1,
            Some((expected, _)) => ToolResult::Err(format!(
                "Error: replay expected {} with {}",
                expected.name, expected.arguments
            )),
            None => ToolResult::Err("Error: replay script exhausted".into()),
        }
    })
}
