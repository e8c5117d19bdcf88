//! Wire format, signed headers and quorum certificates.
//!
//! Everything is encoded canonically: a one-byte tag, then fixed-width
//! big-endian integers, 32-byte digests, and `u32` length prefixes in front of
//! every variable-length body. Signatures cover the header encoding only.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::ledger::{Batch, Tx};
use super::{CommitteeInfo, Slot, ViewNum};
use crate::crypto::{self, Digest, KeyPair, PublicKey, Signature};
use crate::simnet::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteKind {
    Propose,
    Prepare,
    Commit,
    Notify,
}

impl VoteKind {
    fn tag(self) -> u8 {
        match self {
            VoteKind::Propose => 1,
            VoteKind::Prepare => 2,
            VoteKind::Commit => 3,
            VoteKind::Notify => 4,
        }
    }
}

/// The signed part of every protocol message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Header {
    Vote {
        kind: VoteKind,
        c: u64,
        v: ViewNum,
        s: Slot,
        h: Digest,
    },
    ViewChange {
        c: u64,
        v: ViewNum,
    },
    NewView {
        c: u64,
        v: ViewNum,
        cert: Digest,
    },
    /// `accepted` is the value accepted for `last + 1` with its rank, the
    /// view of its accept certificate.
    Status {
        c: u64,
        v: ViewNum,
        last: Slot,
        last_h: Digest,
        accepted: Option<(Digest, ViewNum)>,
    },
    Repropose {
        c: u64,
        v: ViewNum,
        s: Slot,
        h: Digest,
        bodies: Digest,
    },
}

impl Header {
    pub fn vote(kind: VoteKind, c: u64, v: ViewNum, s: Slot, h: Digest) -> Self {
        Header::Vote { kind, c, v, s, h }
    }

    pub fn committee(&self) -> u64 {
        match *self {
            Header::Vote { c, .. }
            | Header::ViewChange { c, .. }
            | Header::NewView { c, .. }
            | Header::Status { c, .. }
            | Header::Repropose { c, .. } => c,
        }
    }

    pub fn view(&self) -> ViewNum {
        match *self {
            Header::Vote { v, .. }
            | Header::ViewChange { v, .. }
            | Header::NewView { v, .. }
            | Header::Status { v, .. }
            | Header::Repropose { v, .. } => v,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc::default();
        self.write(&mut e);
        e.0
    }

    fn write(&self, e: &mut Enc) {
        match self {
            Header::Vote { kind, c, v, s, h } => {
                e.u8(kind.tag());
                e.u64(*c);
                e.u64(*v);
                e.u64(*s);
                e.digest(h);
            }
            Header::ViewChange { c, v } => {
                e.u8(5);
                e.u64(*c);
                e.u64(*v);
            }
            Header::NewView { c, v, cert } => {
                e.u8(6);
                e.u64(*c);
                e.u64(*v);
                e.digest(cert);
            }
            Header::Status {
                c,
                v,
                last,
                last_h,
                accepted,
            } => {
                e.u8(7);
                e.u64(*c);
                e.u64(*v);
                e.u64(*last);
                e.digest(last_h);
                match accepted {
                    None => e.u8(0),
                    Some((h, rank)) => {
                        e.u8(1);
                        e.digest(h);
                        e.u64(*rank);
                    }
                }
            }
            Header::Repropose { c, v, s, h, bodies } => {
                e.u8(8);
                e.u64(*c);
                e.u64(*v);
                e.u64(*s);
                e.digest(h);
                e.digest(bodies);
            }
        }
    }

    fn read(d: &mut Dec<'_>) -> Result<Self, DecodeError> {
        let tag = d.u8()?;
        Ok(match tag {
            1..=4 => {
                let kind = match tag {
                    1 => VoteKind::Propose,
                    2 => VoteKind::Prepare,
                    3 => VoteKind::Commit,
                    _ => VoteKind::Notify,
                };
                Header::Vote {
                    kind,
                    c: d.u64()?,
                    v: d.u64()?,
                    s: d.u64()?,
                    h: d.digest()?,
                }
            }
            5 => Header::ViewChange {
                c: d.u64()?,
                v: d.u64()?,
            },
            6 => Header::NewView {
                c: d.u64()?,
                v: d.u64()?,
                cert: d.digest()?,
            },
            7 => {
                let c = d.u64()?;
                let v = d.u64()?;
                let last = d.u64()?;
                let last_h = d.digest()?;
                let accepted = match d.u8()? {
                    0 => None,
                    1 => Some((d.digest()?, d.u64()?)),
                    t => return Err(DecodeError::BadTag(t)),
                };
                Header::Status {
                    c,
                    v,
                    last,
                    last_h,
                    accepted,
                }
            }
            8 => Header::Repropose {
                c: d.u64()?,
                v: d.u64()?,
                s: d.u64()?,
                h: d.digest()?,
                bodies: d.digest()?,
            },
            t => return Err(DecodeError::BadTag(t)),
        })
    }
}

/// A header signed by committee member `signer`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signed {
    pub signer: NodeId,
    pub header: Header,
    pub sig: Signature,
}

impl Signed {
    pub fn new(kp: &KeyPair, signer: NodeId, header: Header) -> Self {
        let sig = kp.sign(&header.encode());
        Self {
            signer,
            header,
            sig,
        }
    }

    pub fn verify(&self, committee: &CommitteeInfo, cache: &mut SigCache) -> bool {
        match committee.members.get(self.signer as usize) {
            Some(pk) => cache.verify(pk, &self.header.encode(), &self.sig),
            None => false,
        }
    }

    fn write(&self, e: &mut Enc) {
        e.u32(self.signer);
        let h = self.header.encode();
        e.bytes(&h);
        e.raw(&self.sig.0);
    }

    fn read(d: &mut Dec<'_>) -> Result<Self, DecodeError> {
        let signer = d.u32()?;
        let hb = d.bytes()?;
        let mut hd = Dec::new(hb);
        let header = Header::read(&mut hd)?;
        hd.finish()?;
        let sig = Signature(d.array::<64>()?);
        Ok(Self {
            signer,
            header,
            sig,
        })
    }
}

/// Memoized signature checks, shared by every replica of one simulation.
#[derive(Debug, Default)]
pub struct SigCache {
    map: HashMap<(PublicKey, Digest, [u8; 64]), bool>,
    hits: u64,
    misses: u64,
}

impl SigCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn verify(&mut self, pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
        let key = (*pk, Digest::of(msg), sig.0);
        if let Some(&ok) = self.map.get(&key) {
            self.hits += 1;
            return ok;
        }
        self.misses += 1;
        let ok = crypto::verify(pk, msg, sig);
        self.map.insert(key, ok);
        ok
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertError {
    #[error("{have} entries, quorum is {need}")]
    TooFew { have: usize, need: usize },
    #[error("signer {0} appears twice")]
    DuplicateSigner(NodeId),
    #[error("bad signature from {0}")]
    BadSignature(NodeId),
    #[error("entry from {0} does not match the certificate context")]
    ContextMismatch(NodeId),
}

/// A set of signed headers; 𝒜, 𝒬, 𝒱 and 𝒮 all share this shape.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Certificate(pub Vec<Signed>);

impl Certificate {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn digest(&self) -> Digest {
        let mut e = Enc::default();
        self.write(&mut e);
        Digest::of(&e.0)
    }

    /// Quorum size, distinct signers, valid signatures, every header accepted
    /// by `matches`.
    pub fn check(
        &self,
        committee: &CommitteeInfo,
        cache: &mut SigCache,
        matches: impl Fn(&Header) -> bool,
    ) -> Result<(), CertError> {
        let need = committee.quorum();
        if self.0.len() < need {
            return Err(CertError::TooFew {
                have: self.0.len(),
                need,
            });
        }
        let mut seen = BTreeSet::new();
        for e in &self.0 {
            if !seen.insert(e.signer) {
                return Err(CertError::DuplicateSigner(e.signer));
            }
            if !matches(&e.header) {
                return Err(CertError::ContextMismatch(e.signer));
            }
            if !e.verify(committee, cache) {
                return Err(CertError::BadSignature(e.signer));
            }
        }
        Ok(())
    }

    /// `(v, s, h)` of a vote certificate of the given kind, taken from the
    /// first entry.
    pub fn vote_context(&self, kind: VoteKind) -> Option<(ViewNum, Slot, Digest)> {
        match self.0.first()?.header {
            Header::Vote {
                kind: k, v, s, h, ..
            } if k == kind => Some((v, s, h)),
            _ => None,
        }
    }

    /// Validates a certificate of `kind` votes for `(c, ·, s, h)`, all from
    /// one view. Returns that view.
    pub fn check_votes(
        &self,
        kind: VoteKind,
        c: u64,
        s: Slot,
        h: Digest,
        committee: &CommitteeInfo,
        cache: &mut SigCache,
    ) -> Result<ViewNum, CertError> {
        let v = match self.vote_context(kind) {
            Some((v, _, _)) => v,
            None => {
                return Err(match self.0.first() {
                    Some(e) => CertError::ContextMismatch(e.signer),
                    None => CertError::TooFew {
                        have: 0,
                        need: committee.quorum(),
                    },
                })
            }
        };
        let want = Header::vote(kind, c, v, s, h);
        self.check(committee, cache, |hd| *hd == want)?;
        Ok(v)
    }

    fn write(&self, e: &mut Enc) {
        e.u32(self.0.len() as u32);
        for s in &self.0 {
            s.write(e);
        }
    }

    fn read(d: &mut Dec<'_>) -> Result<Self, DecodeError> {
        let n = d.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            out.push(Signed::read(d)?);
        }
        Ok(Self(out))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusMsg {
    pub sig: Signed,
    pub q: Option<Certificate>,
    pub last_batch: Option<Batch>,
    pub a: Option<Certificate>,
    pub accepted_batch: Option<Batch>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReproposeMsg {
    pub sig: Signed,
    pub s_cert: Certificate,
    pub q: Option<Certificate>,
    pub last_batch: Option<Batch>,
    pub a: Option<Certificate>,
    pub batch: Batch,
}

impl ReproposeMsg {
    /// Digest binding the unsigned bodies to the signed header.
    pub fn bodies_digest(
        s_cert: &Certificate,
        q: &Option<Certificate>,
        last_batch: &Option<Batch>,
        a: &Option<Certificate>,
    ) -> Digest {
        let mut e = Enc::default();
        s_cert.write(&mut e);
        write_opt(&mut e, q, Certificate::write);
        write_opt(&mut e, last_batch, write_batch);
        write_opt(&mut e, a, Certificate::write);
        Digest::of(&e.0)
    }
}

/// Everything a committee member can send.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Propose {
        sig: Signed,
        batch: Batch,
    },
    Prepare(Signed),
    Commit(Signed),
    Notify {
        sig: Signed,
        q: Certificate,
        batch: Batch,
    },
    ViewChange(Signed),
    /// 2f+1 view-changes forwarded to the next leader.
    ViewChangeBundle(Certificate),
    NewView {
        sig: Signed,
        v_cert: Certificate,
    },
    Status(Box<StatusMsg>),
    Repropose(Box<ReproposeMsg>),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Propose { .. } => "propose",
            Message::Prepare(_) => "prepare",
            Message::Commit(_) => "commit",
            Message::Notify { .. } => "notify",
            Message::ViewChange(_) => "view_change",
            Message::ViewChangeBundle(_) => "view_change_bundle",
            Message::NewView { .. } => "new_view",
            Message::Status(_) => "status",
            Message::Repropose(_) => "repropose",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc::default();
        match self {
            Message::Propose { sig, batch } => {
                e.u8(1);
                sig.write(&mut e);
                write_batch(batch, &mut e);
            }
            Message::Prepare(sig) => {
                e.u8(2);
                sig.write(&mut e);
            }
            Message::Commit(sig) => {
                e.u8(3);
                sig.write(&mut e);
            }
            Message::Notify { sig, q, batch } => {
                e.u8(4);
                sig.write(&mut e);
                q.write(&mut e);
                write_batch(batch, &mut e);
            }
            Message::ViewChange(sig) => {
                e.u8(5);
                sig.write(&mut e);
            }
            Message::ViewChangeBundle(cert) => {
                e.u8(9);
                cert.write(&mut e);
            }
            Message::NewView { sig, v_cert } => {
                e.u8(6);
                sig.write(&mut e);
                v_cert.write(&mut e);
            }
            Message::Status(m) => {
                e.u8(7);
                m.sig.write(&mut e);
                write_opt(&mut e, &m.q, Certificate::write);
                write_opt(&mut e, &m.last_batch, write_batch);
                write_opt(&mut e, &m.a, Certificate::write);
                write_opt(&mut e, &m.accepted_batch, write_batch);
            }
            Message::Repropose(m) => {
                e.u8(8);
                m.sig.write(&mut e);
                m.s_cert.write(&mut e);
                write_opt(&mut e, &m.q, Certificate::write);
                write_opt(&mut e, &m.last_batch, write_batch);
                write_opt(&mut e, &m.a, Certificate::write);
                write_batch(&m.batch, &mut e);
            }
        }
        e.0
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Dec::new(buf);
        let msg = match d.u8()? {
            1 => Message::Propose {
                sig: Signed::read(&mut d)?,
                batch: read_batch(&mut d)?,
            },
            2 => Message::Prepare(Signed::read(&mut d)?),
            3 => Message::Commit(Signed::read(&mut d)?),
            4 => Message::Notify {
                sig: Signed::read(&mut d)?,
                q: Certificate::read(&mut d)?,
                batch: read_batch(&mut d)?,
            },
            5 => Message::ViewChange(Signed::read(&mut d)?),
            6 => Message::NewView {
                sig: Signed::read(&mut d)?,
                v_cert: Certificate::read(&mut d)?,
            },
            7 => Message::Status(Box::new(StatusMsg {
                sig: Signed::read(&mut d)?,
                q: read_opt(&mut d, Certificate::read)?,
                last_batch: read_opt(&mut d, read_batch)?,
                a: read_opt(&mut d, Certificate::read)?,
                accepted_batch: read_opt(&mut d, read_batch)?,
            })),
            8 => Message::Repropose(Box::new(ReproposeMsg {
                sig: Signed::read(&mut d)?,
                s_cert: Certificate::read(&mut d)?,
                q: read_opt(&mut d, Certificate::read)?,
                last_batch: read_opt(&mut d, read_batch)?,
                a: read_opt(&mut d, Certificate::read)?,
                batch: read_batch(&mut d)?,
            })),
            9 => Message::ViewChangeBundle(Certificate::read(&mut d)?),
            t => return Err(DecodeError::BadTag(t)),
        };
        d.finish()?;
        Ok(msg)
    }

    pub fn digest(&self) -> Digest {
        Digest::of(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated message")]
    Truncated,
    #[error("unknown tag {0}")]
    BadTag(u8),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

fn write_batch(b: &Batch, e: &mut Enc) {
    e.u32(b.0.len() as u32);
    for tx in &b.0 {
        e.raw(&tx.encode());
    }
}

fn read_batch(d: &mut Dec<'_>) -> Result<Batch, DecodeError> {
    let n = d.u32()? as usize;
    let mut txs = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        txs.push(Tx {
            id: d.u64()?,
            input: d.u64()?,
            amount: d.u64()?,
        });
    }
    Ok(Batch(txs))
}

fn write_opt<T>(e: &mut Enc, v: &Option<T>, f: fn(&T, &mut Enc)) {
    match v {
        None => e.u8(0),
        Some(x) => {
            e.u8(1);
            f(x, e);
        }
    }
}

fn read_opt<T>(
    d: &mut Dec<'_>,
    f: fn(&mut Dec<'_>) -> Result<T, DecodeError>,
) -> Result<Option<T>, DecodeError> {
    match d.u8()? {
        0 => Ok(None),
        1 => Ok(Some(f(d)?)),
        t => Err(DecodeError::BadTag(t)),
    }
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_be_bytes());
    }
    fn digest(&mut self, d: &Digest) {
        self.0.extend_from_slice(&d.0);
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.raw(b);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    fn digest(&mut self) -> Result<Digest, DecodeError> {
        Ok(Digest(self.array()?))
    }
    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn finish(&self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
