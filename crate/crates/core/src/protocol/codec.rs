//! Newline-delimited JSON framing.

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("message is not valid UTF-8")]
    Utf8,
    #[error("message is missing the \"type\" field")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("malformed message: {0}")]
    Malformed(String),
}

/// Encodes one message as a JSON object followed by `\n`.
pub fn encode<M: Serialize>(msg: &M) -> Vec<u8> {
    let mut out = serde_json::to_vec(msg).expect("messages always serialize");
    out.push(b'\n');
    out
}

pub fn encode_line<M: Serialize>(msg: &M) -> String {
    String::from_utf8(encode(msg)).expect("JSON is UTF-8")
}

/// Decodes exactly one message; a single trailing newline is allowed.
pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<M, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DecodeError::Utf8)?;
    let body = text.strip_suffix('\n').unwrap_or(text);
    let body = body.strip_suffix('\r').unwrap_or(body);
    if body.contains('\n') {
        return Err(DecodeError::Malformed("more than one line".into()));
    }
    let value: serde_json::Value = serde_json::from_str(body).map_err(|e| DecodeError::Malformed(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| DecodeError::Malformed("expected a JSON object".into()))?;
    let ty = match obj.get("type") {
        Some(serde_json::Value::String(t)) => t.clone(),
        Some(_) => return Err(DecodeError::Malformed("\"type\" must be a string".into())),
        None => return Err(DecodeError::MissingType),
    };
    serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        if msg.starts_with("unknown variant") {
            DecodeError::UnknownType(ty)
        } else {
            DecodeError::Malformed(msg)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Blob, ClientBound, ServerBound};

    #[test]
    fn golden_encodings() {
        assert_eq!(encode_line(&ServerBound::Step), "{\"type\":\"step\"}\n");
        assert_eq!(
            encode_line(&ClientBound::Prim { count: 3, prim: 0, args: vec![12], value: 224 }),
            "{\"type\":\"prim\",\"count\":3,\"prim\":0,\"args\":[12],\"value\":224}\n"
        );
        assert_eq!(encode_line(&ServerBound::Mock { value: -5 }), "{\"type\":\"mock\",\"value\":-5}\n");
        assert_eq!(
            encode_line(&ServerBound::BreakAdd { func: 1, instr: 4 }),
            "{\"type\":\"breakAdd\",\"func\":1,\"instr\":4}\n"
        );
        assert_eq!(
            encode_line(&ClientBound::Snapshot { data: Blob(b"MVS1".to_vec()) }),
            "{\"type\":\"snapshot\",\"data\":\"TVZTMQ==\"}\n"
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(decode::<ServerBound>(b"{\"type\":\"warp\"}"), Err(DecodeError::UnknownType(t)) if t == "warp"));
        assert!(matches!(decode::<ServerBound>(b"{\"type\":\"mock\"}"), Err(DecodeError::Malformed(_))));
        assert!(matches!(decode::<ServerBound>(b"{\"value\":1}"), Err(DecodeError::MissingType)));
        assert!(decode::<ServerBound>(b"{\"type\":\"step\"} x").is_err());
        assert!(decode::<ServerBound>(b"{\"type\":\"step\"}\n{\"type\":\"step\"}\n").is_err());
        assert!(decode::<ClientBound>(b"{\"type\":\"snapshot\",\"data\":\"!!\"}").is_err());
        assert!(decode::<ServerBound>(b"{\"type\":\"mock\",\"value\":4294967296}").is_err());
    }

    #[test]
    fn accepts_trailing_newline_only() {
        assert_eq!(decode::<ServerBound>(b"{\"type\":\"inspect\"}\n").unwrap(), ServerBound::Inspect);
        assert_eq!(decode::<ServerBound>(b"{\"type\":\"inspect\"}").unwrap(), ServerBound::Inspect);
    }
}
