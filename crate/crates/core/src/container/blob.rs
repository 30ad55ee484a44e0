//! Sectioned checkpoint image.
//!
//! Layout: the 8-byte magic `CRMETA01`, then each section as a 4-byte tag,
//! an 8-byte big-endian payload length, the payload, and a CRC32 of the
//! payload. Sections appear at most once and in the fixed order of
//! [`SectionTag::ORDER`].

use std::fmt;

use thiserror::Error;

use crate::proto::{DecodeError, Reader};

pub const MAGIC: &[u8; 8] = b"CRMETA01";
/// Tag, length and CRC framing around every payload.
pub const SECTION_FRAMING: u64 = 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionTag {
    Pstree,
    Pages,
    SkTcp,
    SkSctp,
    Netns,
    Cgroup,
    GtpDev,
    GtpTun,
}

impl SectionTag {
    pub const ORDER: [SectionTag; 8] = [
        SectionTag::Pstree,
        SectionTag::Pages,
        SectionTag::SkTcp,
        SectionTag::SkSctp,
        SectionTag::Netns,
        SectionTag::Cgroup,
        SectionTag::GtpDev,
        SectionTag::GtpTun,
    ];

    pub fn code(self) -> [u8; 4] {
        *match self {
            SectionTag::Pstree => b"PSTR",
            SectionTag::Pages => b"PAGE",
            SectionTag::SkTcp => b"SKTC",
            SectionTag::SkSctp => b"SKSC",
            SectionTag::Netns => b"NETN",
            SectionTag::Cgroup => b"CGRP",
            SectionTag::GtpDev => b"GDEV",
            SectionTag::GtpTun => b"GTUN",
        }
    }

    pub fn from_code(code: [u8; 4]) -> Option<Self> {
        Self::ORDER.into_iter().find(|t| t.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            SectionTag::Pstree => "PSTREE",
            SectionTag::Pages => "PAGES",
            SectionTag::SkTcp => "SK-TCP",
            SectionTag::SkSctp => "SK-SCTP",
            SectionTag::Netns => "NETNS",
            SectionTag::Cgroup => "CGROUP",
            SectionTag::GtpDev => "GTP-DEV",
            SectionTag::GtpTun => "GTP-TUN",
        }
    }
}

impl fmt::Display for SectionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlobError {
    #[error("bad magic {0:02x?}")]
    BadMagic(Vec<u8>),
    #[error("unknown section tag {0:02x?}")]
    UnknownTag([u8; 4]),
    #[error("section {tag} out of order or repeated")]
    OutOfOrder { tag: SectionTag },
    #[error("section {tag} CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch {
        tag: SectionTag,
        stored: u32,
        computed: u32,
    },
    #[error("section {tag} length {len} exceeds remaining {remaining} bytes")]
    Overlong {
        tag: SectionTag,
        len: u64,
        remaining: usize,
    },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub tag: SectionTag,
    pub payload: Vec<u8>,
}

impl Section {
    pub fn crc(&self) -> u32 {
        crc32fast::hash(&self.payload)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataBlob {
    sections: Vec<Section>,
}

impl MetadataBlob {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a section; tags must be strictly increasing in section order.
    pub fn push(&mut self, tag: SectionTag, payload: Vec<u8>) -> Result<(), BlobError> {
        if self.sections.last().is_some_and(|s| s.tag >= tag) {
            return Err(BlobError::OutOfOrder { tag });
        }
        self.sections.push(Section { tag, payload });
        Ok(())
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn section(&self, tag: SectionTag) -> Option<&[u8]> {
        self.sections
            .iter()
            .find(|s| s.tag == tag)
            .map(|s| s.payload.as_slice())
    }

    pub fn has(&self, tag: SectionTag) -> bool {
        self.section(tag).is_some()
    }

    /// Size of [`encode`](Self::encode)'s output.
    pub fn encoded_len(&self) -> u64 {
        MAGIC.len() as u64
            + self
                .sections
                .iter()
                .map(|s| SECTION_FRAMING + s.payload.len() as u64)
                .sum::<u64>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len() as usize);
        out.extend_from_slice(MAGIC);
        for s in &self.sections {
            out.extend_from_slice(&s.tag.code());
            out.extend_from_slice(&(s.payload.len() as u64).to_be_bytes());
            out.extend_from_slice(&s.payload);
            out.extend_from_slice(&s.crc().to_be_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, BlobError> {
        let mut r = Reader::new(buf);
        let magic = r.bytes(MAGIC.len()).map_err(|_| BlobError::BadMagic(buf.to_vec()))?;
        if magic != MAGIC {
            return Err(BlobError::BadMagic(magic.to_vec()));
        }
        let mut blob = MetadataBlob::new();
        while r.remaining() > 0 {
            let code = r.array::<4>()?;
            let tag = SectionTag::from_code(code).ok_or(BlobError::UnknownTag(code))?;
            let len = r.u64()?;
            let remaining = r.remaining();
            if len > remaining as u64 {
                return Err(BlobError::Overlong { tag, len, remaining });
            }
            let payload = r.bytes(len as usize)?.to_vec();
            let stored = r.u32()?;
            let computed = crc32fast::hash(&payload);
            if stored != computed {
                return Err(BlobError::CrcMismatch { tag, stored, computed });
            }
            blob.push(tag, payload)?;
        }
        Ok(blob)
    }
}
