//! Request and response payloads carried inside frames.
//!
//! | type        | dir | payload                                                    |
//! |-------------|-----|------------------------------------------------------------|
//! | HELLO       | c→s | bytes nonce(16) ‖ bytes client_kx_public                   |
//! | RA_REPORT   | s→c | see [`AttestationReport::encode`](crate::attestation::AttestationReport::encode) |
//! | ADDR_MAP    | s→c | JSON object name → `(*(RET(*)(0xADDR)))`                   |
//! | LOAD_FN     | c→s | bytes name ‖ bytes descriptor ‖ bytes code                 |
//! | LOAD_ACK    | s→c | u64 id                                                     |
//! | EXEC_FN     | c→s | u64 id ‖ u32 argc ‖ argc × (u8 tag ‖ value)                |
//! | EXEC_RESULT | s→c | u8 has_return ‖ i64 return_word ‖ u64 wall_time_ns         |
//! | UNLOAD_FN   | both| u64 id (the reply echoes it)                               |
//! | CLEAR_FNS   | both| empty request; reply u64 count                             |
//! | LIST_FNS    | c→s | empty; answered with ADDR_MAP                              |
//! | ERROR       | s→c | u16 code ‖ bytes utf-8 message                             |
//!
//! `bytes` is `u32 length ‖ data`; all integers are big-endian. Argument tags:
//! 0x01 int (`i64`), 0x02 string (`bytes`), 0x03 buffer (`bytes`).

use thiserror::Error;

use crate::channel::MsgType;
use crate::enclave::{ArgValue, ExecResult, FunctionId};
use crate::linker::{parse_map_json, render_map_json, AddressMap};
use crate::wire::{Reader, WireError, Writer};

/// ERROR codes that are not enclave errors.
pub mod codes {
    pub const UNEXPECTED_MESSAGE: u16 = 0x0001;
    pub const MALFORMED_REQUEST: u16 = 0x0002;
    pub const NOT_ATTESTED: u16 = 0x0003;
    pub const ATTESTATION_FAILED: u16 = 0x0004;
}

const TAG_INT: u8 = 0x01;
const TAG_STR: u8 = 0x02;
const TAG_BUF: u8 = 0x03;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed {what} payload: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error("unexpected message type {0:?}")]
    Unexpected(MsgType),
}

fn malformed(what: &'static str) -> impl Fn(WireError) -> ProtocolError {
    move |e| ProtocolError::Malformed {
        what,
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Load {
        name: String,
        descriptor: String,
        code: Vec<u8>,
    },
    Exec {
        id: FunctionId,
        args: Vec<ArgValue>,
    },
    Unload {
        id: FunctionId,
    },
    Clear,
    List,
}

impl Request {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Request::Load { .. } => MsgType::LoadFn,
            Request::Exec { .. } => MsgType::ExecFn,
            Request::Unload { .. } => MsgType::UnloadFn,
            Request::Clear => MsgType::ClearFns,
            Request::List => MsgType::ListFns,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Request::Load { name, descriptor, code } => {
                w.bytes(name.as_bytes()).bytes(descriptor.as_bytes()).bytes(code);
            }
            Request::Exec { id, args } => {
                w.u64(id.0).u32(args.len() as u32);
                for a in args {
                    match a {
                        ArgValue::Int(v) => w.u8(TAG_INT).i64(*v),
                        ArgValue::Str(s) => w.u8(TAG_STR).bytes(s),
                        ArgValue::Buf(b) => w.u8(TAG_BUF).bytes(b),
                    };
                }
            }
            Request::Unload { id } => {
                w.u64(id.0);
            }
            Request::Clear | Request::List => {}
        }
        w.finish()
    }

    pub fn decode(msg_type: MsgType, payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(payload);
        let req = match msg_type {
            MsgType::LoadFn => {
                let m = malformed("LOAD_FN");
                let name = utf8(r.bytes().map_err(&m)?, "LOAD_FN")?;
                let descriptor = utf8(r.bytes().map_err(&m)?, "LOAD_FN")?;
                let code = r.bytes().map_err(&m)?.to_vec();
                Request::Load { name, descriptor, code }
            }
            MsgType::ExecFn => {
                let m = malformed("EXEC_FN");
                let id = FunctionId(r.u64().map_err(&m)?);
                let argc = r.u32().map_err(&m)?;
                let mut args = Vec::new();
                for _ in 0..argc {
                    args.push(match r.u8().map_err(&m)? {
                        TAG_INT => ArgValue::Int(r.i64().map_err(&m)?),
                        TAG_STR => ArgValue::Str(r.bytes().map_err(&m)?.to_vec()),
                        TAG_BUF => ArgValue::Buf(r.bytes().map_err(&m)?.to_vec()),
                        t => {
                            return Err(ProtocolError::Malformed {
                                what: "EXEC_FN",
                                reason: format!("unknown argument tag {t:#04x}"),
                            })
                        }
                    });
                }
                Request::Exec { id, args }
            }
            MsgType::UnloadFn => Request::Unload {
                id: FunctionId(r.u64().map_err(malformed("UNLOAD_FN"))?),
            },
            MsgType::ClearFns => Request::Clear,
            MsgType::ListFns => Request::List,
            other => return Err(ProtocolError::Unexpected(other)),
        };
        r.end().map_err(malformed("request"))?;
        Ok(req)
    }
}

fn utf8(b: &[u8], what: &'static str) -> Result<String, ProtocolError> {
    String::from_utf8(b.to_vec()).map_err(|_| ProtocolError::Malformed {
        what,
        reason: "text field is not UTF-8".into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    LoadAck { id: FunctionId },
    AddrMap(AddressMap),
    ExecResult(ExecResult),
    Unloaded { id: FunctionId },
    Cleared { count: u64 },
    Error { code: u16, message: String },
}

impl Response {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Response::LoadAck { .. } => MsgType::LoadAck,
            Response::AddrMap(_) => MsgType::AddrMap,
            Response::ExecResult(_) => MsgType::ExecResult,
            Response::Unloaded { .. } => MsgType::UnloadFn,
            Response::Cleared { .. } => MsgType::ClearFns,
            Response::Error { .. } => MsgType::Error,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Response::LoadAck { id } | Response::Unloaded { id } => {
                w.u64(id.0);
            }
            Response::AddrMap(map) => return render_map_json(map),
            Response::ExecResult(r) => {
                w.u8(r.return_word.is_some() as u8)
                    .i64(r.return_word.unwrap_or(0))
                    .u64(r.wall_time_ns);
            }
            Response::Cleared { count } => {
                w.u64(*count);
            }
            Response::Error { code, message } => {
                w.u16(*code).bytes(message.as_bytes());
            }
        }
        w.finish()
    }

    pub fn decode(msg_type: MsgType, payload: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = Reader::new(payload);
        let resp = match msg_type {
            MsgType::LoadAck => Response::LoadAck {
                id: FunctionId(r.u64().map_err(malformed("LOAD_ACK"))?),
            },
            MsgType::AddrMap => {
                return parse_map_json(payload)
                    .map(Response::AddrMap)
                    .map_err(|e| ProtocolError::Malformed {
                        what: "ADDR_MAP",
                        reason: e.to_string(),
                    })
            }
            MsgType::ExecResult => {
                let m = malformed("EXEC_RESULT");
                let has = r.u8().map_err(&m)?;
                let word = r.i64().map_err(&m)?;
                let wall_time_ns = r.u64().map_err(&m)?;
                Response::ExecResult(ExecResult {
                    return_word: (has != 0).then_some(word),
                    wall_time_ns,
                })
            }
            MsgType::UnloadFn => Response::Unloaded {
                id: FunctionId(r.u64().map_err(malformed("UNLOAD_FN"))?),
            },
            MsgType::ClearFns => Response::Cleared {
                count: r.u64().map_err(malformed("CLEAR_FNS"))?,
            },
            MsgType::Error => {
                let m = malformed("ERROR");
                let code = r.u16().map_err(&m)?;
                let message = String::from_utf8_lossy(r.bytes().map_err(&m)?).into_owned();
                Response::Error { code, message }
            }
            other => return Err(ProtocolError::Unexpected(other)),
        };
        r.end().map_err(malformed("response"))?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::AddressMapEntry;

    #[test]
    fn requests_roundtrip() {
        let reqs = [
            Request::Load {
                name: "sum".into(),
                descriptor: "i(ii)".into(),
                code: vec![0x55, 0xc3],
            },
            Request::Exec {
                id: FunctionId(3),
                args: vec![ArgValue::Int(-2), ArgValue::str("pw"), ArgValue::Buf(vec![1, 2, 3])],
            },
            Request::Unload { id: FunctionId(9) },
            Request::Clear,
            Request::List,
        ];
        for req in reqs {
            assert_eq!(Request::decode(req.msg_type(), &req.encode()).unwrap(), req);
        }
    }

    #[test]
    fn responses_roundtrip() {
        let map = AddressMap::from_entries(vec![AddressMapEntry::new("strcmp", "int", 0x7f1e438179a0)]).unwrap();
        let resps = [
            Response::LoadAck { id: FunctionId(1) },
            Response::AddrMap(map),
            Response::ExecResult(ExecResult {
                return_word: Some(5),
                wall_time_ns: 77,
            }),
            Response::ExecResult(ExecResult {
                return_word: None,
                wall_time_ns: 1,
            }),
            Response::Unloaded { id: FunctionId(4) },
            Response::Cleared { count: 2 },
            Response::Error {
                code: 0x301,
                message: "unknown function id 7".into(),
            },
        ];
        for resp in resps {
            assert_eq!(Response::decode(resp.msg_type(), &resp.encode()).unwrap(), resp);
        }
    }

    #[test]
    fn exact_exec_encoding() {
        let req = Request::Exec {
            id: FunctionId(1),
            args: vec![ArgValue::Int(2), ArgValue::Int(3)],
        };
        let mut want = vec![0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 2];
        want.extend([1, 0, 0, 0, 0, 0, 0, 0, 2]);
        want.extend([1, 0, 0, 0, 0, 0, 0, 0, 3]);
        assert_eq!(req.encode(), want);
    }

    #[test]
    fn malformed_payloads() {
        assert!(Request::decode(MsgType::ExecFn, &[0; 5]).is_err());
        assert!(Request::decode(MsgType::ExecFn, &[0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 9]).is_err());
        assert!(Request::decode(MsgType::ClearFns, &[1]).is_err());
        assert!(Request::decode(MsgType::LoadFn, &[0, 0, 0, 1, 0xff, 0, 0, 0, 0, 0, 0, 0, 0]).is_err());
        assert_eq!(
            Request::decode(MsgType::Hello, &[]),
            Err(ProtocolError::Unexpected(MsgType::Hello))
        );
    }
}
