use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DeviceError;
use crate::semantic::format_number;

/// Which of Read/Write/Execute a resource supports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operations {
    pub read: bool,
    pub write: bool,
    pub execute: bool,
}

impl Operations {
    pub const R: Operations = Operations {
        read: true,
        write: false,
        execute: false,
    };
    pub const RW: Operations = Operations {
        read: true,
        write: true,
        execute: false,
    };
    pub const E: Operations = Operations {
        read: false,
        write: false,
        execute: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Double,
    Integer,
    Boolean,
    Opaque,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    String(String),
    Double(f64),
    Integer(i64),
    Boolean(bool),
    Opaque(Vec<u8>),
}

impl Value {
    pub fn value_type(&self) -> ValueType {
        match self {
            Value::String(_) => ValueType::String,
            Value::Double(_) => ValueType::Double,
            Value::Integer(_) => ValueType::Integer,
            Value::Boolean(_) => ValueType::Boolean,
            Value::Opaque(_) => ValueType::Opaque,
        }
    }

    pub fn default_for(t: ValueType) -> Value {
        match t {
            ValueType::String => Value::String(String::new()),
            ValueType::Double => Value::Double(0.0),
            ValueType::Integer => Value::Integer(0),
            ValueType::Boolean => Value::Boolean(false),
            ValueType::Opaque => Value::Opaque(Vec::new()),
        }
    }

    /// Plain-text wire form: canonical decimals for numbers, `true`/`false` for booleans.
    pub fn to_payload(&self) -> Vec<u8> {
        match self {
            Value::Opaque(b) => b.clone(),
            other => other.to_string().into_bytes(),
        }
    }

    pub fn from_payload(t: ValueType, payload: &[u8]) -> Result<Value, DeviceError> {
        if t == ValueType::Opaque {
            return Ok(Value::Opaque(payload.to_vec()));
        }
        let text = std::str::from_utf8(payload)
            .map_err(|_| DeviceError::BadValue("payload is not UTF-8".into()))?;
        Value::parse(t, text)
    }

    pub fn parse(t: ValueType, text: &str) -> Result<Value, DeviceError> {
        let bad = || DeviceError::BadValue(format!("{text:?} is not a valid {t:?}"));
        let s = text.trim();
        Ok(match t {
            ValueType::String => Value::String(text.to_string()),
            ValueType::Double => {
                let v = f64::from_str(s).map_err(|_| bad())?;
                if !v.is_finite() {
                    return Err(bad());
                }
                Value::Double(v)
            }
            ValueType::Integer => Value::Integer(s.parse().map_err(|_| bad())?),
            ValueType::Boolean => match s {
                "true" | "1" => Value::Boolean(true),
                "false" | "0" => Value::Boolean(false),
                _ => return Err(bad()),
            },
            ValueType::Opaque => Value::Opaque(text.as_bytes().to_vec()),
        })
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Double(v) => Some(*v),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Boolean(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::String(s) => f.write_str(s),
            Value::Double(v) => f.write_str(&format_number(*v)),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Boolean(b) => write!(f, "{b}"),
            Value::Opaque(b) => {
                for byte in b {
                    write!(f, "{byte:02x}")?;
                }
                Ok(())
            }
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::String(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::String(s)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Double(v)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Boolean(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDef {
    pub id: u16,
    pub name: String,
    pub ops: Operations,
    pub value_type: ValueType,
}

impl ResourceDef {
    pub fn new(id: u16, name: &str, ops: Operations, value_type: ValueType) -> Self {
        ResourceDef {
            id,
            name: name.to_string(),
            ops,
            value_type,
        }
    }

    /// An Execute-only resource.
    pub fn action(id: u16, name: &str) -> Self {
        ResourceDef::new(id, name, Operations::E, ValueType::Opaque)
    }

    /// Execute resources hold no value.
    pub fn stores_value(&self) -> bool {
        self.ops.read || self.ops.write
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDef {
    pub object_id: u16,
    pub name: String,
    pub resources: Vec<ResourceDef>,
}

impl ObjectDef {
    pub fn new(
        object_id: u16,
        name: &str,
        resources: Vec<ResourceDef>,
    ) -> Result<Self, DeviceError> {
        let mut ids: Vec<u16> = resources.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DeviceError::BadValue(format!(
                "object {object_id} has duplicate resource ids"
            )));
        }
        Ok(ObjectDef {
            object_id,
            name: name.to_string(),
            resources,
        })
    }

    pub fn resource(&self, id: u16) -> Option<&ResourceDef> {
        self.resources.iter().find(|r| r.id == id)
    }

    pub fn has_execute(&self) -> bool {
        self.resources.iter().any(|r| r.ops.execute)
    }

    /// A fresh instance with every value-carrying resource at its type default.
    pub fn instantiate(&self, instance_id: u16) -> ObjectInstance {
        let values = self
            .resources
            .iter()
            .filter(|r| r.stores_value())
            .map(|r| (r.id, Value::default_for(r.value_type)))
            .collect();
        ObjectInstance {
            object_id: self.object_id,
            instance_id,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub object_id: u16,
    pub instance_id: u16,
    pub values: BTreeMap<u16, Value>,
}

impl ObjectInstance {
    pub fn path(&self) -> String {
        format!("/{}/{}", self.object_id, self.instance_id)
    }

    pub fn resource_path(&self, resource_id: u16) -> ResourcePath {
        ResourcePath::new(self.object_id, self.instance_id, resource_id)
    }
}

/// `/oid/iid/rid`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ResourcePath {
    pub object_id: u16,
    pub instance_id: u16,
    pub resource_id: u16,
}

impl ResourcePath {
    pub fn new(object_id: u16, instance_id: u16, resource_id: u16) -> Self {
        ResourcePath {
            object_id,
            instance_id,
            resource_id,
        }
    }

    pub fn from_segments<S: AsRef<str>>(segs: &[S]) -> Option<ResourcePath> {
        match segs {
            [o, i, r] => Some(ResourcePath::new(
                o.as_ref().parse().ok()?,
                i.as_ref().parse().ok()?,
                r.as_ref().parse().ok()?,
            )),
            _ => None,
        }
    }
}

impl FromStr for ResourcePath {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segs: Vec<&str> = s.trim_start_matches('/').split('/').collect();
        ResourcePath::from_segments(&segs).ok_or_else(|| DeviceError::NotFound(s.to_string()))
    }
}

impl fmt::Display for ResourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "/{}/{}/{}",
            self.object_id, self.instance_id, self.resource_id
        )
    }
}

/// Execute arguments: `key=value` pairs separated by `,` or `&`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecArgs(BTreeMap<String, String>);

impl ExecArgs {
    pub fn parse(text: &str) -> Result<ExecArgs, DeviceError> {
        let mut map = BTreeMap::new();
        for part in text
            .split([',', '&'])
            .map(str::trim)
            .filter(|p| !p.is_empty())
        {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| DeviceError::BadArgs(format!("expected key=value, got {part:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(ExecArgs(map))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn number(&self, key: &str) -> Result<Option<f64>, DeviceError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| DeviceError::BadArgs(format!("{key}={v} is not a number"))),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ExecArgs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_text_forms() {
        assert_eq!(Value::Double(20.0).to_string(), "20.0");
        assert_eq!(Value::Double(22.5).to_string(), "22.5");
        assert_eq!(Value::Boolean(true).to_string(), "true");
        assert_eq!(
            Value::parse(ValueType::Double, "50.0").unwrap(),
            Value::Double(50.0)
        );
        assert!(matches!(
            Value::parse(ValueType::Double, "abc"),
            Err(DeviceError::BadValue(_))
        ));
        assert!(Value::parse(ValueType::Double, "NaN").is_err());
        assert!(Value::parse(ValueType::Boolean, "yes").is_err());
    }

    #[test]
    fn duplicate_resource_ids_rejected() {
        let r = ResourceDef::new(1, "a", Operations::R, ValueType::Double);
        assert!(ObjectDef::new(9, "x", vec![r.clone(), r]).is_err());
    }

    #[test]
    fn instantiate_skips_actions() {
        let def = ObjectDef::new(
            9,
            "x",
            vec![
                ResourceDef::new(0, "state", Operations::R, ValueType::String),
                ResourceDef::action(1, "go"),
            ],
        )
        .unwrap();
        let inst = def.instantiate(0);
        assert_eq!(inst.values.len(), 1);
        assert_eq!(inst.path(), "/9/0");
    }

    #[test]
    fn path_parse() {
        let p: ResourcePath = "/26241/0/12".parse().unwrap();
        assert_eq!(p, ResourcePath::new(26241, 0, 12));
        assert_eq!(p.to_string(), "/26241/0/12");
        assert!("/26241/0".parse::<ResourcePath>().is_err());
        assert!("/a/b/c".parse::<ResourcePath>().is_err());
    }

    #[test]
    fn exec_args() {
        let a = ExecArgs::parse("setpoint=50, duration=30&x=y").unwrap();
        assert_eq!(a.number("setpoint").unwrap(), Some(50.0));
        assert_eq!(a.get("x"), Some("y"));
        assert!(ExecArgs::parse("").unwrap().is_empty());
        assert!(ExecArgs::parse("novalue").is_err());
        assert!(ExecArgs::parse("v=abc").unwrap().number("v").is_err());
    }
}
