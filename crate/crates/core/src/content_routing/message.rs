//! Wire format of the single application-layer message.
//!
//! ```text
//! [type:1][msg_id:4, big-endian][content_id:16][data:0..=65535]
//! ```

use std::fmt;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 21;
pub const MAX_DATA_LEN: usize = 65_535;

/// MD5 digest of a content name.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContentId(pub [u8; 16]);

impl ContentId {
    pub fn from_name(name: &str) -> Self {
        ContentId(Md5::digest(name.as_bytes()).into())
    }

    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

impl fmt::Debug for ContentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentId({})", self.hex())
    }
}

impl Serialize for ContentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.hex())
    }
}

impl<'de> Deserialize<'de> for ContentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bad = || serde::de::Error::custom(format!("expected 32 hex digits, got {s:?}"));
        if s.len() != 32 || !s.is_ascii() {
            return Err(bad());
        }
        let mut out = [0u8; 16];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        Ok(ContentId(out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    ContentRegistration = 0x01,
    ContentRegistrationAck = 0x02,
    ContentAdvertisement = 0x03,
    ContentAdvertisementAck = 0x04,
    ContentData = 0x05,
    ContentRequest = 0x06,
    RelayElection = 0x07,
    RelayElectionAck = 0x08,
    GoRoleNotify = 0x09,
    GoRoleNotifyAck = 0x0a,
    RouteFailureNotify = 0x0b,
}

impl MessageType {
    pub const ALL: [MessageType; 11] = [
        MessageType::ContentRegistration,
        MessageType::ContentRegistrationAck,
        MessageType::ContentAdvertisement,
        MessageType::ContentAdvertisementAck,
        MessageType::ContentData,
        MessageType::ContentRequest,
        MessageType::RelayElection,
        MessageType::RelayElectionAck,
        MessageType::GoRoleNotify,
        MessageType::GoRoleNotifyAck,
        MessageType::RouteFailureNotify,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.get(usize::from(b).wrapping_sub(1)).copied()
    }

    pub fn is_ack(self) -> bool {
        matches!(
            self,
            MessageType::ContentRegistrationAck
                | MessageType::ContentAdvertisementAck
                | MessageType::RelayElectionAck
                | MessageType::GoRoleNotifyAck
        )
    }

    /// The acknowledgement type answering this message, if any.
    pub fn ack(self) -> Option<Self> {
        match self {
            MessageType::ContentRegistration => Some(MessageType::ContentRegistrationAck),
            MessageType::ContentAdvertisement => Some(MessageType::ContentAdvertisementAck),
            MessageType::RelayElection => Some(MessageType::RelayElectionAck),
            MessageType::GoRoleNotify => Some(MessageType::GoRoleNotifyAck),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            MessageType::ContentRegistration => "REG",
            MessageType::ContentRegistrationAck => "REG_ACK",
            MessageType::ContentAdvertisement => "ADV",
            MessageType::ContentAdvertisementAck => "ADV_ACK",
            MessageType::ContentData => "DATA",
            MessageType::ContentRequest => "REQ",
            MessageType::RelayElection => "ELECT",
            MessageType::RelayElectionAck => "ELECT_ACK",
            MessageType::GoRoleNotify => "GO_ROLE",
            MessageType::GoRoleNotifyAck => "GO_ROLE_ACK",
            MessageType::RouteFailureNotify => "ROUTE_FAIL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CcrMessage {
    pub kind: MessageType,
    pub msg_id: u32,
    pub content_id: ContentId,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed message: {0}")]
    MalformedMessage(&'static str),
    #[error("data field of {0} bytes exceeds {MAX_DATA_LEN}")]
    PayloadTooLarge(usize),
}

impl CcrMessage {
    pub fn new(kind: MessageType, msg_id: u32, content_id: ContentId, data: Vec<u8>) -> Self {
        CcrMessage { kind, msg_id, content_id, data }
    }

    /// An acknowledgement echoing this message's id and content.
    pub fn ack_for(&self) -> Option<CcrMessage> {
        self.kind.ack().map(|k| CcrMessage::new(k, self.msg_id, self.content_id, Vec::new()))
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.data.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        if self.data.len() > MAX_DATA_LEN {
            return Err(CodecError::PayloadTooLarge(self.data.len()));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.msg_id.to_be_bytes());
        out.extend_from_slice(&self.content_id.0);
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::MalformedMessage("shorter than the 21-byte header"));
        }
        if bytes.len() > HEADER_LEN + MAX_DATA_LEN {
            return Err(CodecError::MalformedMessage("data field longer than 65535 bytes"));
        }
        let kind = MessageType::from_byte(bytes[0]).ok_or(CodecError::MalformedMessage("unknown type byte"))?;
        let msg_id = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes"));
        let content_id = ContentId(bytes[5..21].try_into().expect("16 bytes"));
        Ok(CcrMessage { kind, msg_id, content_id, data: bytes[HEADER_LEN..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn md5_reference_vectors() {
        // RFC 1321 test suite.
        assert_eq!(ContentId::from_name("").hex(), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(ContentId::from_name("abc").hex(), "900150983cd24fb0d6963f7d28e17f72");
        assert_eq!(ContentId::from_name("message digest").hex(), "f96b697d7cb7938d525a2f31aaf161d0");
    }

    #[test]
    fn empty_data_encodes_to_header_only() {
        let m = CcrMessage::new(MessageType::ContentData, 0xdead_beef, ContentId::from_name("x"), vec![]);
        let b = m.encode().unwrap();
        assert_eq!(b.len(), 21);
        assert_eq!(b[0], 0x05);
        assert_eq!(&b[1..5], &[0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(CcrMessage::decode(&b).unwrap(), m);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(CcrMessage::decode(&[1; 20]), Err(CodecError::MalformedMessage(_))));
        let mut b = vec![0u8; 21];
        assert!(matches!(CcrMessage::decode(&b), Err(CodecError::MalformedMessage(_))));
        b[0] = 0x0c;
        assert!(matches!(CcrMessage::decode(&b), Err(CodecError::MalformedMessage(_))));
        let big = CcrMessage::new(MessageType::ContentData, 1, ContentId::default(), vec![0; MAX_DATA_LEN + 1]);
        assert_eq!(big.encode(), Err(CodecError::PayloadTooLarge(MAX_DATA_LEN + 1)));
    }

    #[test]
    fn acks_echo_the_message_id() {
        let m = CcrMessage::new(MessageType::ContentAdvertisement, 42, ContentId::from_name("a"), vec![1, 2]);
        let a = m.ack_for().unwrap();
        assert_eq!((a.kind, a.msg_id, a.content_id), (MessageType::ContentAdvertisementAck, 42, m.content_id));
        assert!(CcrMessage::new(MessageType::ContentData, 1, ContentId::default(), vec![]).ack_for().is_none());
    }

    #[test]
    fn content_id_serde_is_hex() {
        let id = ContentId::from_name("");
        let j = serde_json::to_string(&id).unwrap();
        assert_eq!(j, "\"d41d8cd98f00b204e9800998ecf8427e\"");
        assert_eq!(serde_json::from_str::<ContentId>(&j).unwrap(), id);
    }

    fn any_message() -> impl Strategy<Value = CcrMessage> {
        (0..11usize, any::<u32>(), any::<[u8; 16]>(), proptest::collection::vec(any::<u8>(), 0..2048))
            .prop_map(|(k, id, c, d)| CcrMessage::new(MessageType::ALL[k], id, ContentId(c), d))
    }

    proptest! {
        #[test]
        fn round_trip(m in any_message()) {
            let b = m.encode().unwrap();
            prop_assert_eq!(b.len(), 21 + m.data.len());
            prop_assert_eq!(CcrMessage::decode(&b).unwrap(), m);
        }

        #[test]
        fn decode_never_panics(b in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = CcrMessage::decode(&b);
        }
    }
}
