//! Tool semantics: generic table operations, the retail builtins, and the
//! side-channel tools (calculate / think / transfer).
//!
//! Error strings are part of the observable behavior: an agent reads them
//! and must be able to recover, so they stay stable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::db::Table;
use super::tools::{SideChannel, ToolSpec};
use super::EnvError;

type Tables = BTreeMap<String, Table>;
type Args = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Handler {
    /// Named retail builtin (`get_order_details`, `cancel_pending_order`, ...).
    Builtin {
        name: String,
    },
    /// Return the record whose id is the value of `key_arg`.
    Lookup {
        table: String,
        key_arg: String,
        #[serde(default)]
        not_found: Option<String>,
    },
    /// Return the id of the first record (in id order) whose fields equal the
    /// given arguments. `fields` maps argument name to a dotted field path.
    Find {
        table: String,
        fields: BTreeMap<String, String>,
        #[serde(default)]
        not_found: Option<String>,
    },
    /// Overwrite fields of the record keyed by `key_arg`; returns the record.
    Update {
        table: String,
        key_arg: String,
        set: BTreeMap<String, String>,
        #[serde(default)]
        not_found: Option<String>,
    },
    /// Create a record keyed by `key_arg` from all arguments.
    Insert {
        table: String,
        key_arg: String,
    },
    /// Remove the record keyed by `key_arg`.
    Delete {
        table: String,
        key_arg: String,
        #[serde(default)]
        not_found: Option<String>,
    },
    /// Append a constant to an array field of a fixed record.
    Append {
        table: String,
        record: String,
        field: String,
        value: Value,
    },
    Calculate,
    Think,
    Transfer,
}

const READ_BUILTINS: &[&str] = &[
    "find_user_id_by_email",
    "find_user_id_by_name_zip",
    "get_user_details",
    "get_order_details",
    "get_product_details",
    "list_all_product_types",
];

const WRITE_BUILTINS: &[&str] = &[
    "cancel_pending_order",
    "modify_pending_order_items",
    "modify_pending_order_address",
    "modify_pending_order_payment",
    "modify_user_address",
    "return_delivered_order_items",
    "exchange_delivered_order_items",
];

pub(crate) fn resolve(spec: &ToolSpec) -> Result<Handler, EnvError> {
    let side = match spec.side_channel {
        SideChannel::Calculate => Some(Handler::Calculate),
        SideChannel::Think => Some(Handler::Think),
        SideChannel::Transfer => Some(Handler::Transfer),
        SideChannel::Database => None,
    };
    let handler = match (&spec.handler, side) {
        (Some(h), Some(s)) if *h != s => {
            return Err(EnvError::InvalidTool {
                name: spec.name.clone(),
                reason: "side-channel tools cannot carry a database handler".into(),
            })
        }
        (Some(h), _) => h.clone(),
        (None, Some(s)) => s,
        (None, None) => Handler::Builtin {
            name: spec.name.clone(),
        },
    };
    if let Handler::Builtin { name } = &handler {
        if !READ_BUILTINS.contains(&name.as_str()) && !WRITE_BUILTINS.contains(&name.as_str()) {
            return Err(EnvError::InvalidTool {
                name: spec.name.clone(),
                reason: format!("no handler and no builtin named {name}"),
            });
        }
    }
    Ok(handler)
}

impl Handler {
    pub fn is_mutating(&self) -> bool {
        match self {
            Handler::Builtin { name } => WRITE_BUILTINS.contains(&name.as_str()),
            Handler::Update { .. }
            | Handler::Insert { .. }
            | Handler::Delete { .. }
            | Handler::Append { .. } => true,
            Handler::Lookup { .. }
            | Handler::Find { .. }
            | Handler::Calculate
            | Handler::Think
            | Handler::Transfer => false,
        }
    }

    pub(crate) fn read(&self, tables: &Tables, args: &Args) -> Result<Value, String> {
        match self {
            Handler::Builtin { name } => retail_read(name, tables, args),
            Handler::Lookup {
                table,
                key_arg,
                not_found,
            } => {
                let id = str_arg(args, key_arg)?;
                tables
                    .get(table)
                    .and_then(|t| t.get(id))
                    .cloned()
                    .ok_or_else(|| not_found_text(not_found, table))
            }
            Handler::Find {
                table,
                fields,
                not_found,
            } => {
                let t = tables
                    .get(table)
                    .ok_or_else(|| not_found_text(not_found, table))?;
                t.iter()
                    .find(|(_, rec)| {
                        fields
                            .iter()
                            .all(|(arg, path)| args.get(arg).is_some_and(|v| field_at(rec, path) == Some(v)))
                    })
                    .map(|(id, _)| Value::String(id.clone()))
                    .ok_or_else(|| not_found_text(not_found, table))
            }
            Handler::Calculate => calculate(args),
            Handler::Think => Ok(Value::String(String::new())),
            Handler::Transfer => Ok(Value::String("Transfer successful".into())),
            _ => unreachable!("mutating handler routed to read"),
        }
    }

    pub(crate) fn write(&self, tables: &mut Tables, args: &Args) -> Result<Value, String> {
        match self {
            Handler::Builtin { name } => retail_write(name, tables, args),
            Handler::Update {
                table,
                key_arg,
                set,
                not_found,
            } => {
                let id = str_arg(args, key_arg)?;
                let rec = tables
                    .get_mut(table)
                    .and_then(|t| t.get_mut(id))
                    .ok_or_else(|| not_found_text(not_found, table))?;
                for (arg, path) in set {
                    if let Some(v) = args.get(arg) {
                        set_field(rec, path, v.clone())?;
                    }
                }
                Ok(rec.clone())
            }
            Handler::Insert { table, key_arg } => {
                let id = str_arg(args, key_arg)?.to_string();
                let t = tables.entry(table.clone()).or_default();
                if t.contains_key(&id) {
                    return Err(format!("Error: {} {} already exists", singular(table), id));
                }
                let rec = Value::Object(args.clone());
                t.insert(id, rec.clone());
                Ok(rec)
            }
            Handler::Delete {
                table,
                key_arg,
                not_found,
            } => {
                let id = str_arg(args, key_arg)?;
                tables
                    .get_mut(table)
                    .and_then(|t| t.remove(id))
                    .ok_or_else(|| not_found_text(not_found, table))
            }
            Handler::Append {
                table,
                record,
                field,
                value,
            } => {
                let rec = tables
                    .get_mut(table)
                    .and_then(|t| t.get_mut(record))
                    .ok_or_else(|| format!("Error: {} not found", singular(table)))?;
                match rec.get_mut(field) {
                    Some(Value::Array(items)) => {
                        items.push(value.clone());
                        Ok(Value::Array(items.clone()))
                    }
                    _ => Err(format!("Error: {field} is not a list")),
                }
            }
            _ => unreachable!("read-only handler routed to write"),
        }
    }
}

fn singular(table: &str) -> &str {
    table.strip_suffix('s').unwrap_or(table)
}

fn not_found_text(custom: &Option<String>, table: &str) -> String {
    custom
        .clone()
        .unwrap_or_else(|| format!("Error: {} not found", singular(table)))
}

fn str_arg<'a>(args: &'a Args, key: &str) -> Result<&'a str, String> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("Error: missing argument {key}"))
}

fn str_list(args: &Args, key: &str) -> Result<Vec<String>, String> {
    match args.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| format!("Error: {key} must contain strings"))
            })
            .collect(),
        _ => Err(format!("Error: missing argument {key}")),
    }
}

fn field_at<'a>(rec: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(rec, |cur, seg| match cur {
        Value::Object(m) => m.get(seg),
        Value::Array(a) => a.get(seg.parse::<usize>().ok()?),
        _ => None,
    })
}

fn set_field(rec: &mut Value, path: &str, v: Value) -> Result<(), String> {
    let mut cur = rec;
    let segs: Vec<&str> = path.split('.').collect();
    for seg in &segs[..segs.len() - 1] {
        cur = cur
            .as_object_mut()
            .ok_or_else(|| format!("Error: cannot set {path}"))?
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    cur.as_object_mut()
        .ok_or_else(|| format!("Error: cannot set {path}"))?
        .insert(segs[segs.len() - 1].to_string(), v);
    Ok(())
}

/// Arithmetic over `0-9 + - * / ( ) .` and spaces, rounded to two decimals.
fn calculate(args: &Args) -> Result<Value, String> {
    let expr = str_arg(args, "expression")?;
    if !expr.chars().all(|c| "0123456789+-*/(). ".contains(c)) {
        return Err("Error: invalid characters in expression".into());
    }
    let v = meval::eval_str(expr).map_err(|e| format!("Error: {e}"))?;
    if !v.is_finite() {
        return Err("Error: division by zero".into());
    }
    let r = (v * 100.0).round() / 100.0;
    Ok(Value::String(if r.fract() == 0.0 {
        format!("{r:.1}")
    } else {
        format!("{r}")
    }))
}

// ---- retail builtins -------------------------------------------------------

fn retail_read(name: &str, t: &Tables, args: &Args) -> Result<Value, String> {
    let table = |n: &str| {
        t.get(n)
            .ok_or_else(|| format!("Error: {} not found", singular(n)))
    };
    match name {
        "find_user_id_by_email" => {
            let email = str_arg(args, "email")?;
            table("users")?
                .iter()
                .find(|(_, u)| u.get("email").and_then(Value::as_str) == Some(email))
                .map(|(id, _)| Value::String(id.clone()))
                .ok_or_else(|| "Error: User not found".to_string())
        }
        "find_user_id_by_name_zip" => {
            let (first, last, zip) = (
                str_arg(args, "first_name")?,
                str_arg(args, "last_name")?,
                str_arg(args, "zip")?,
            );
            table("users")?
                .iter()
                .find(|(_, u)| {
                    field_at(u, "name.first_name").and_then(Value::as_str) == Some(first)
                        && field_at(u, "name.last_name").and_then(Value::as_str) == Some(last)
                        && field_at(u, "address.zip").and_then(Value::as_str) == Some(zip)
                })
                .map(|(id, _)| Value::String(id.clone()))
                .ok_or_else(|| "Error: User not found".to_string())
        }
        "get_user_details" => {
            let id = str_arg(args, "user_id")?;
            table("users")?
                .get(id)
                .cloned()
                .ok_or_else(|| "Error: User not found".into())
        }
        "get_order_details" => {
            let id = str_arg(args, "order_id")?;
            table("orders")?
                .get(id)
                .cloned()
                .ok_or_else(|| "Error: Order not found".into())
        }
        "get_product_details" => {
            let id = str_arg(args, "product_id")?;
            table("products")?
                .get(id)
                .cloned()
                .ok_or_else(|| "Error: Product not found".into())
        }
        "list_all_product_types" => {
            let mut out = Map::new();
            for (id, p) in table("products")? {
                let name = p.get("name").and_then(Value::as_str).unwrap_or(id);
                out.insert(name.to_string(), Value::String(id.clone()));
            }
            Ok(Value::Object(out))
        }
        other => unreachable!("unknown read builtin {other}"),
    }
}

fn order_mut<'a>(t: &'a mut Tables, id: &str) -> Result<&'a mut Value, String> {
    t.get_mut("orders")
        .and_then(|o| o.get_mut(id))
        .ok_or_else(|| "Error: Order not found".to_string())
}

fn status_of(order: &Value) -> &str {
    order.get("status").and_then(Value::as_str).unwrap_or("")
}

fn user_id_of(order: &Value) -> Result<String, String> {
    order
        .get("user_id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| "Error: User not found".to_string())
}

/// Payment method record of `user_id`, or the not-found error.
fn payment_method(t: &Tables, user_id: &str, pm_id: &str) -> Result<Value, String> {
    t.get("users")
        .and_then(|u| u.get(user_id))
        .and_then(|u| u.get("payment_methods"))
        .and_then(|pms| pms.get(pm_id))
        .cloned()
        .ok_or_else(|| "Error: Payment method not found".to_string())
}

fn adjust_gift_card(t: &mut Tables, user_id: &str, pm_id: &str, delta: f64) -> Result<(), String> {
    let pm = t
        .get_mut("users")
        .and_then(|u| u.get_mut(user_id))
        .and_then(|u| u.get_mut("payment_methods"))
        .and_then(|pms| pms.get_mut(pm_id))
        .ok_or_else(|| "Error: Payment method not found".to_string())?;
    if pm.get("source").and_then(Value::as_str) != Some("gift_card") {
        return Ok(());
    }
    let balance = pm.get("balance").and_then(Value::as_f64).unwrap_or(0.0) + delta;
    if balance < 0.0 {
        return Err("Error: Insufficient gift card balance to pay for the new item".into());
    }
    pm["balance"] = json!(balance);
    Ok(())
}

fn product_variant(t: &Tables, product_id: &str, item_id: &str) -> Option<Value> {
    t.get("products")?
        .get(product_id)?
        .get("variants")?
        .get(item_id)
        .cloned()
}

/// Validates an item swap and returns the replaced order items plus the
/// price difference (new total minus old total).
fn plan_item_swap(
    t: &Tables,
    order: &Value,
    item_ids: &[String],
    new_item_ids: &[String],
) -> Result<(Vec<Value>, f64), String> {
    if item_ids.len() != new_item_ids.len() {
        return Err("Error: The number of items to be exchanged should match".into());
    }
    let mut items: Vec<Value> = order
        .get("items")
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    let mut used = vec![false; items.len()];
    let mut diff = 0.0;
    for (old_id, new_id) in item_ids.iter().zip(new_item_ids) {
        let pos = items
            .iter()
            .enumerate()
            .position(|(i, it)| !used[i] && it.get("item_id").and_then(Value::as_str) == Some(old_id))
            .ok_or_else(|| format!("Error: {old_id} not found"))?;
        used[pos] = true;
        let product_id = items[pos]
            .get("product_id")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let variant = product_variant(t, &product_id, new_id)
            .filter(|v| v.get("available").and_then(Value::as_bool) == Some(true))
            .ok_or_else(|| format!("Error: New item {new_id} not found or available"))?;
        let old_price = items[pos].get("price").and_then(Value::as_f64).unwrap_or(0.0);
        let new_price = variant.get("price").and_then(Value::as_f64).unwrap_or(0.0);
        diff += new_price - old_price;
        let item = items[pos].as_object_mut().expect("order items are objects");
        item.insert("item_id".into(), Value::String(new_id.clone()));
        item.insert("price".into(), json!(new_price));
        if let Some(opts) = variant.get("options") {
            item.insert("options".into(), opts.clone());
        }
    }
    Ok((items, diff))
}

fn retail_write(name: &str, t: &mut Tables, args: &Args) -> Result<Value, String> {
    match name {
        "cancel_pending_order" => {
            let id = str_arg(args, "order_id")?;
            let reason = str_arg(args, "reason")?;
            let order = order_mut(t, id)?.clone();
            if status_of(&order) != "pending" {
                return Err("Error: Non-pending order cannot be cancelled".into());
            }
            if reason != "no longer needed" && reason != "ordered by mistake" {
                return Err("Error: Invalid reason".into());
            }
            let user_id = user_id_of(&order)?;
            let payments: Vec<Value> = order
                .get("payment_history")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            let mut refunds = Vec::new();
            for p in &payments {
                if p.get("transaction_type").and_then(Value::as_str) != Some("payment") {
                    continue;
                }
                let amount = p.get("amount").and_then(Value::as_f64).unwrap_or(0.0);
                let pm = p
                    .get("payment_method_id")
                    .and_then(Value::as_str)
                    .unwrap_or_default();
                adjust_gift_card(t, &user_id, pm, amount)?;
                refunds
                    .push(json!({"transaction_type": "refund", "amount": amount, "payment_method_id": pm}));
            }
            let order = order_mut(t, id)?;
            order["status"] = json!("cancelled");
            order["cancel_reason"] = json!(reason);
            if let Some(Value::Array(h)) = order.get_mut("payment_history") {
                h.extend(refunds);
            }
            Ok(order.clone())
        }
        "modify_pending_order_items" => {
            let id = str_arg(args, "order_id")?;
            let item_ids = str_list(args, "item_ids")?;
            let new_item_ids = str_list(args, "new_item_ids")?;
            let pm_id = str_arg(args, "payment_method_id")?;
            let order = order_mut(t, id)?.clone();
            if status_of(&order) != "pending" {
                return Err("Error: Non-pending order cannot be modified".into());
            }
            let user_id = user_id_of(&order)?;
            payment_method(t, &user_id, pm_id)?;
            let (items, diff) = plan_item_swap(t, &order, &item_ids, &new_item_ids)?;
            adjust_gift_card(t, &user_id, pm_id, -diff)?;
            let order = order_mut(t, id)?;
            order["items"] = Value::Array(items);
            order["status"] = json!("pending (item modified)");
            if let Some(Value::Array(h)) = order.get_mut("payment_history") {
                h.push(json!({
                    "transaction_type": if diff > 0.0 { "payment" } else { "refund" },
                    "amount": diff.abs(),
                    "payment_method_id": pm_id,
                }));
            }
            Ok(order.clone())
        }
        "modify_pending_order_address" => {
            let id = str_arg(args, "order_id")?;
            let address = address_from(args)?;
            let order = order_mut(t, id)?;
            if status_of(order) != "pending" {
                return Err("Error: Non-pending order cannot be modified".into());
            }
            order["address"] = address;
            Ok(order.clone())
        }
        "modify_pending_order_payment" => {
            let id = str_arg(args, "order_id")?;
            let pm_id = str_arg(args, "payment_method_id")?;
            let order = order_mut(t, id)?.clone();
            if status_of(&order) != "pending" {
                return Err("Error: Non-pending order cannot be modified".into());
            }
            let user_id = user_id_of(&order)?;
            payment_method(t, &user_id, pm_id)?;
            let history = order
                .get("payment_history")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default();
            let [first] = history.as_slice() else {
                return Err("Error: There should be exactly one payment for a pending order".into());
            };
            let old_pm = first
                .get("payment_method_id")
                .and_then(Value::as_str)
                .unwrap_or_default();
            if old_pm == pm_id {
                return Err("Error: The new payment method should be different from the current one".into());
            }
            let amount = first.get("amount").and_then(Value::as_f64).unwrap_or(0.0);
            adjust_gift_card(t, &user_id, pm_id, -amount)?;
            adjust_gift_card(t, &user_id, old_pm, amount)?;
            let order = order_mut(t, id)?;
            if let Some(Value::Array(h)) = order.get_mut("payment_history") {
                h.push(json!({"transaction_type": "payment", "amount": amount, "payment_method_id": pm_id}));
                h.push(json!({"transaction_type": "refund", "amount": amount, "payment_method_id": old_pm}));
            }
            Ok(order.clone())
        }
        "modify_user_address" => {
            let user_id = str_arg(args, "user_id")?;
            let address = address_from(args)?;
            let user = t
                .get_mut("users")
                .and_then(|u| u.get_mut(user_id))
                .ok_or_else(|| "Error: User not found".to_string())?;
            user["address"] = address;
            Ok(user.clone())
        }
        "return_delivered_order_items" => {
            let id = str_arg(args, "order_id")?;
            let item_ids = str_list(args, "item_ids")?;
            let pm_id = str_arg(args, "payment_method_id")?;
            let order = order_mut(t, id)?.clone();
            if status_of(&order) != "delivered" {
                return Err("Error: Non-delivered order cannot be returned".into());
            }
            let user_id = user_id_of(&order)?;
            payment_method(t, &user_id, pm_id)?;
            check_items_present(&order, &item_ids)?;
            let order = order_mut(t, id)?;
            order["status"] = json!("return requested");
            order["return_items"] = json!(sorted(item_ids));
            order["return_payment_method_id"] = json!(pm_id);
            Ok(order.clone())
        }
        "exchange_delivered_order_items" => {
            let id = str_arg(args, "order_id")?;
            let item_ids = str_list(args, "item_ids")?;
            let new_item_ids = str_list(args, "new_item_ids")?;
            let pm_id = str_arg(args, "payment_method_id")?;
            let order = order_mut(t, id)?.clone();
            if status_of(&order) != "delivered" {
                return Err("Error: Non-delivered order cannot be exchanged".into());
            }
            let user_id = user_id_of(&order)?;
            payment_method(t, &user_id, pm_id)?;
            let (_, diff) = plan_item_swap(t, &order, &item_ids, &new_item_ids)?;
            let order = order_mut(t, id)?;
            order["status"] = json!("exchange requested");
            order["exchange_items"] = json!(sorted(item_ids));
            order["exchange_new_items"] = json!(sorted(new_item_ids));
            order["exchange_payment_method_id"] = json!(pm_id);
            order["exchange_price_difference"] = json!(diff);
            Ok(order.clone())
        }
        other => unreachable!("unknown write builtin {other}"),
    }
}

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

fn check_items_present(order: &Value, item_ids: &[String]) -> Result<(), String> {
    let present: Vec<&str> = order
        .get("items")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|i| i.get("item_id").and_then(Value::as_str))
                .collect()
        })
        .unwrap_or_default();
    for id in item_ids {
        if !present.contains(&id.as_str()) {
            return Err(format!("Error: {id} not found"));
        }
    }
    Ok(())
}

fn address_from(args: &Args) -> Result<Value, String> {
    let mut out = Map::new();
    for k in ["address1", "address2", "city", "state", "country", "zip"] {
        out.insert(k.into(), Value::String(str_arg(args, k)?.to_string()));
    }
    Ok(Value::Object(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: Value) -> Args {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn calculate_rounds_to_cents() {
        assert_eq!(
            calculate(&args(json!({"expression": "256.67 - 242.92"}))).unwrap(),
            json!("13.75")
        );
        assert_eq!(
            calculate(&args(json!({"expression": "2 * (3 + 1)"}))).unwrap(),
            json!("8.0")
        );
        assert!(calculate(&args(json!({"expression": "import os"}))).is_err());
        assert!(calculate(&args(json!({"expression": "1/0"}))).is_err());
    }

    #[test]
    fn set_field_creates_nested_objects() {
        let mut rec = json!({"a": 1});
        set_field(&mut rec, "b.c", json!(2)).unwrap();
        assert_eq!(rec, json!({"a": 1, "b": {"c": 2}}));
    }
}
