//! Framing for the critic bridge.
//!
//! A message is a 4-byte little-endian header length, a UTF-8 JSON header,
//! then one raw little-endian `f32` payload per entry of `shapes`, in order.
//!
//! | type           | payloads                         | sender |
//! |----------------|----------------------------------|--------|
//! | `request`      | frames                           | core   |
//! | `response`     | eps_uncond, eps_text, eps_injected | bridge |
//! | `vjp_request`  | frames, latent cotangent         | core   |
//! | `vjp_response` | frame cotangent                  | bridge |
//! | `error`        | none (`message` is set)          | bridge |

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::{CriticRequest, CriticResponse};

pub const FORMAT_VERSION: u32 = 1;
/// Headers beyond this size are rejected before allocation.
pub const MAX_HEADER_BYTES: usize = 1 << 20;
/// Per-message payload cap (4 GiB of floats would not fit anyway).
pub const MAX_PAYLOAD_VALUES: usize = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("header of {0} bytes exceeds the limit")]
    HeaderTooLarge(usize),
    #[error("unsupported format_version {0}")]
    Version(u32),
    #[error("unsupported dtype {0:?}")]
    Dtype(String),
    #[error("payload of {0} values exceeds the limit")]
    PayloadTooLarge(usize),
    #[error("expected a {expected} message, got {got}")]
    UnexpectedType { expected: &'static str, got: String },
    #[error("message is missing field {0}")]
    MissingField(&'static str),
    #[error("expected {expected} payloads, got {got}")]
    PayloadCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Request,
    Response,
    Error,
    VjpRequest,
    VjpResponse,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Request => "request",
            MessageType::Response => "response",
            MessageType::Error => "error",
            MessageType::VjpRequest => "vjp_request",
            MessageType::VjpResponse => "vjp_response",
        }
    }
}

fn v1() -> u32 {
    FORMAT_VERSION
}

fn f32_name() -> String {
    "f32".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default = "v1")]
    pub format_version: u32,
    #[serde(default)]
    pub shapes: Vec<Vec<usize>>,
    #[serde(default = "f32_name")]
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Header {
    pub fn new(kind: MessageType) -> Self {
        Self {
            kind,
            format_version: FORMAT_VERSION,
            shapes: Vec::new(),
            dtype: f32_name(),
            tau: None,
            prompt: None,
            cfg_scale: None,
            seed: None,
            schedule_weight: None,
            latent_shape: None,
            message: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub header: Header,
    pub payloads: Vec<Vec<f32>>,
}

impl Message {
    pub fn error(message: impl Into<String>) -> Self {
        let mut header = Header::new(MessageType::Error);
        header.message = Some(message.into());
        Self { header, payloads: Vec::new() }
    }

    fn expect(&self, kind: MessageType, payloads: usize) -> Result<(), WireError> {
        if self.header.kind != kind {
            return Err(WireError::UnexpectedType { expected: kind.as_str(), got: self.header.kind.as_str().into() });
        }
        if self.payloads.len() != payloads {
            return Err(WireError::PayloadCount { expected: payloads, got: self.payloads.len() });
        }
        Ok(())
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    let mut header = msg.header.clone();
    header.shapes = if msg.header.shapes.len() == msg.payloads.len() {
        msg.header.shapes.clone()
    } else {
        msg.payloads.iter().map(|p| vec![p.len()]).collect()
    };
    let json = serde_json::to_vec(&header)?;
    if json.len() > MAX_HEADER_BYTES {
        return Err(WireError::HeaderTooLarge(json.len()));
    }
    let mut buf = Vec::with_capacity(4 + json.len() + msg.payloads.iter().map(|p| p.len() * 4).sum::<usize>());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in &msg.payloads {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_HEADER_BYTES {
        return Err(WireError::HeaderTooLarge(len));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(WireError::Version(header.format_version));
    }
    if header.dtype != "f32" {
        return Err(WireError::Dtype(header.dtype));
    }
    let mut total = 0usize;
    let mut payloads = Vec::with_capacity(header.shapes.len());
    for shape in &header.shapes {
        let n: usize = shape.iter().product();
        total = total.saturating_add(n);
        if total > MAX_PAYLOAD_VALUES {
            return Err(WireError::PayloadTooLarge(total));
        }
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        payloads.push(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect());
    }
    Ok(Message { header, payloads })
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|x| *x as f64).collect()
}

fn request_header(kind: MessageType, req: &CriticRequest) -> Header {
    let mut h = Header::new(kind);
    h.tau = Some(req.tau);
    h.prompt = Some(req.prompt.clone());
    h.cfg_scale = Some(req.cfg_scale);
    h.seed = Some(req.seed);
    h
}

pub fn encode_request(req: &CriticRequest) -> Message {
    let mut header = request_header(MessageType::Request, req);
    header.shapes = vec![req.frame_shape.clone()];
    Message { header, payloads: vec![to_f32(&req.frames)] }
}

pub fn decode_request(msg: &Message) -> Result<CriticRequest, WireError> {
    msg.expect(MessageType::Request, 1)?;
    let h = &msg.header;
    Ok(CriticRequest {
        frames: to_f64(&msg.payloads[0]),
        frame_shape: h.shapes[0].clone(),
        prompt: h.prompt.clone().ok_or(WireError::MissingField("prompt"))?,
        tau: h.tau.ok_or(WireError::MissingField("tau"))?,
        cfg_scale: h.cfg_scale.ok_or(WireError::MissingField("cfg_scale"))?,
        seed: h.seed.ok_or(WireError::MissingField("seed"))?,
    })
}

pub fn encode_response(resp: &CriticResponse) -> Message {
    let mut header = Header::new(MessageType::Response);
    header.shapes = vec![resp.latent_shape.clone(); 3];
    header.latent_shape = Some(resp.latent_shape.clone());
    header.schedule_weight = Some(resp.schedule_weight);
    Message { header, payloads: vec![to_f32(&resp.eps_uncond), to_f32(&resp.eps_text), to_f32(&resp.eps_injected)] }
}

pub fn decode_response(msg: &Message) -> Result<CriticResponse, WireError> {
    msg.expect(MessageType::Response, 3)?;
    let h = &msg.header;
    Ok(CriticResponse {
        latent_shape: h.latent_shape.clone().unwrap_or_else(|| h.shapes[0].clone()),
        eps_uncond: to_f64(&msg.payloads[0]),
        eps_text: to_f64(&msg.payloads[1]),
        eps_injected: to_f64(&msg.payloads[2]),
        schedule_weight: h.schedule_weight.ok_or(WireError::MissingField("schedule_weight"))?,
    })
}

pub fn encode_vjp_request(req: &CriticRequest, latent_shape: &[usize], cotangent: &[f64]) -> Message {
    let mut header = request_header(MessageType::VjpRequest, req);
    header.shapes = vec![req.frame_shape.clone(), latent_shape.to_vec()];
    Message { header, payloads: vec![to_f32(&req.frames), to_f32(cotangent)] }
}

pub fn decode_vjp_response(msg: &Message) -> Result<Vec<f64>, WireError> {
    msg.expect(MessageType::VjpResponse, 1)?;
    Ok(to_f64(&msg.payloads[0]))
}
