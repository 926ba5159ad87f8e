//! Minimal CoAP over UDP: message codec, client with retransmission and
//! Observe support, and a deduplicating sequential server.

mod endpoint;
mod message;

pub use endpoint::{
    resolve, serve, Client, CoapError, Handler, HandlerError, Notifier, Observation, Request,
    RequestConfig, Response, Server, ServerHandle,
};
pub use message::{
    content_format, decode, decode_uint, encode, encode_uint, option, CoapOption, Code, CodecError,
    Message, MessageType, VERSION,
};
