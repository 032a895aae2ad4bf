//! Frame header and payload encodings. Everything is little-endian.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::graph::Direction;
use crate::sampler::{
    DegreeRequest, DegreeResponse, GatherRequest, GatherResponse, Neighbor, Quota, Rounding,
    ShardCounters,
};

pub const MAGIC: [u8; 4] = *b"GLRP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
/// Payloads above this are refused and the connection closed, since the
/// stream position can no longer be trusted.
pub const MAX_PAYLOAD: u32 = 64 << 20;

pub const RESPONSE_BIT: u16 = 0x8000;
pub const ERROR_OPCODE: u16 = 0xFFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Opcode {
    Ping = 0,
    UniformGather = 1,
    WeightedGather = 2,
    Degrees = 3,
    LoadCounters = 4,
}

impl Opcode {
    pub fn from_u16(x: u16) -> Option<Self> {
        Some(match x {
            0 => Opcode::Ping,
            1 => Opcode::UniformGather,
            2 => Opcode::WeightedGather,
            3 => Opcode::Degrees,
            4 => Opcode::LoadCounters,
            _ => return None,
        })
    }
}

/// Error codes carried in an error frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    BadMagic = 1,
    BadVersion = 2,
    UnknownOpcode = 3,
    BadPayload = 4,
    TooLarge = 5,
    Internal = 6,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub magic: [u8; 4],
    pub version: u16,
    pub opcode: u16,
    pub request_id: u64,
    pub payload_len: u32,
}

impl Header {
    pub fn new(opcode: u16, request_id: u64, payload_len: usize) -> Self {
        Header {
            magic: MAGIC,
            version: VERSION,
            opcode,
            request_id,
            payload_len: payload_len as u32,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&self.magic);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.opcode.to_le_bytes());
        b[8..16].copy_from_slice(&self.request_id.to_le_bytes());
        b[16..20].copy_from_slice(&self.payload_len.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN]) -> Self {
        Header {
            magic: b[0..4].try_into().unwrap(),
            version: u16::from_le_bytes([b[4], b[5]]),
            opcode: u16::from_le_bytes([b[6], b[7]]),
            request_id: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            payload_len: u32::from_le_bytes(b[16..20].try_into().unwrap()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub header: Header,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: u16, request_id: u64, payload: Vec<u8>) -> Self {
        Frame {
            header: Header::new(opcode, request_id, payload.len()),
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())?;
        w.flush()
    }
}

/// Reads one frame. `Ok(None)` on a clean end of stream before a header.
/// The payload is read whatever the header says, so that a bad magic or
/// opcode does not desynchronize the stream; only the length is checked.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut hb = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut hb[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = Header::decode(&hb);
    if header.payload_len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload of {} bytes exceeds limit {MAX_PAYLOAD}",
            header.payload_len
        )));
    }
    let mut payload = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame { header, payload }))
}

pub fn error_payload(code: ErrorCode, message: &str) -> Vec<u8> {
    let mut w = Writer::default();
    w.u16(code as u16);
    w.u32(message.len() as u32);
    w.buf.extend_from_slice(message.as_bytes());
    w.buf
}

pub fn decode_error(payload: &[u8]) -> Result<(u16, String)> {
    let mut r = Reader::new(payload);
    let code = r.u16()?;
    let len = r.u32()? as usize;
    let msg = String::from_utf8_lossy(r.bytes(len)?).into_owned();
    r.finish()?;
    Ok((code, msg))
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }
    fn u16(&mut self, x: u16) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Protocol(format!(
                "payload truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    /// Element count that must fit in the remaining bytes at `elem` bytes each.
    fn count(&mut self, elem: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::Protocol(format!("count {n} exceeds payload")));
        }
        Ok(n)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_direction(w: &mut Writer, d: Direction) {
    w.u8(match d {
        Direction::Out => 0,
        Direction::In => 1,
        Direction::Both => 2,
    });
}

fn get_direction(r: &mut Reader) -> Result<Direction> {
    match r.u8()? {
        0 => Ok(Direction::Out),
        1 => Ok(Direction::In),
        x => Err(Error::Protocol(format!("bad direction tag {x}"))),
    }
}

fn put_type(w: &mut Writer, t: Option<u16>) {
    match t {
        None => {
            w.u8(0);
            w.u16(0);
        }
        Some(t) => {
            w.u8(1);
            w.u16(t);
        }
    }
}

fn get_type(r: &mut Reader) -> Result<Option<u16>> {
    let flag = r.u8()?;
    let t = r.u16()?;
    match flag {
        0 => Ok(None),
        1 => Ok(Some(t)),
        x => Err(Error::Protocol(format!("bad edge-type flag {x}"))),
    }
}

/// `hop u32, fanout u32, direction u8, type flag u8, type u16, rng seed u64,
/// rounding u8, quota tag u8, seed count u32, seeds u64*n, quota values`.
pub fn encode_gather(req: &GatherRequest) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(req.hop);
    w.u32(req.fanout);
    put_direction(&mut w, req.direction);
    put_type(&mut w, req.edge_type);
    w.u64(req.rng_seed);
    w.u8(match req.rounding {
        Rounding::Stochastic => 0,
        Rounding::ExpectedFloor => 1,
        Rounding::Hypergeometric => 2,
    });
    w.u8(match req.quota {
        Quota::Proportional => 0,
        Quota::GlobalDegrees(_) => 1,
        Quota::Explicit(_) => 2,
    });
    w.u32(req.seeds.len() as u32);
    for &s in &req.seeds {
        w.u64(s);
    }
    match &req.quota {
        Quota::Proportional => {}
        Quota::GlobalDegrees(d) => d.iter().for_each(|&x| w.u64(x)),
        Quota::Explicit(c) => c.iter().for_each(|&x| w.u32(x)),
    }
    w.buf
}

pub fn decode_gather(payload: &[u8]) -> Result<GatherRequest> {
    let mut r = Reader::new(payload);
    let hop = r.u32()?;
    let fanout = r.u32()?;
    let direction = get_direction(&mut r)?;
    let edge_type = get_type(&mut r)?;
    let rng_seed = r.u64()?;
    let rounding = match r.u8()? {
        0 => Rounding::Stochastic,
        1 => Rounding::ExpectedFloor,
        2 => Rounding::Hypergeometric,
        x => return Err(Error::Protocol(format!("bad rounding tag {x}"))),
    };
    let tag = r.u8()?;
    let n = r.count(8)?;
    let seeds = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let quota = match tag {
        0 => Quota::Proportional,
        1 => Quota::GlobalDegrees((0..n).map(|_| r.u64()).collect::<Result<_>>()?),
        2 => Quota::Explicit((0..n).map(|_| r.u32()).collect::<Result<_>>()?),
        x => return Err(Error::Protocol(format!("bad quota tag {x}"))),
    };
    r.finish()?;
    Ok(GatherRequest {
        seeds,
        fanout,
        hop,
        direction,
        edge_type,
        rng_seed,
        rounding,
        quota,
    })
}

/// `shard u16, seed count u32`, then per seed a presence byte and, when
/// present, `count u32` and `(vertex u64, edge id u64, score f64)` triples.
pub fn encode_gather_response(resp: &GatherResponse) -> Vec<u8> {
    let mut w = Writer::default();
    w.u16(resp.shard);
    w.u32(resp.partials.len() as u32);
    for p in &resp.partials {
        match p {
            None => w.u8(0),
            Some(ns) => {
                w.u8(1);
                w.u32(ns.len() as u32);
                for n in ns {
                    w.u64(n.vertex);
                    w.u64(n.edge_id);
                    w.f64(n.score);
                }
            }
        }
    }
    w.buf
}

pub fn decode_gather_response(payload: &[u8]) -> Result<GatherResponse> {
    let mut r = Reader::new(payload);
    let shard = r.u16()?;
    let n = r.count(1)?;
    let mut partials = Vec::with_capacity(n);
    for _ in 0..n {
        match r.u8()? {
            0 => partials.push(None),
            1 => {
                let k = r.count(24)?;
                let mut ns = Vec::with_capacity(k);
                for _ in 0..k {
                    ns.push(Neighbor {
                        vertex: r.u64()?,
                        edge_id: r.u64()?,
                        shard,
                        score: r.f64()?,
                    });
                }
                partials.push(Some(ns));
            }
            x => return Err(Error::Protocol(format!("bad presence byte {x}"))),
        }
    }
    r.finish()?;
    Ok(GatherResponse { shard, partials })
}

pub fn encode_degrees(req: &DegreeRequest) -> Vec<u8> {
    let mut w = Writer::default();
    put_direction(&mut w, req.direction);
    put_type(&mut w, req.edge_type);
    w.u32(req.seeds.len() as u32);
    req.seeds.iter().for_each(|&s| w.u64(s));
    w.buf
}

pub fn decode_degrees(payload: &[u8]) -> Result<DegreeRequest> {
    let mut r = Reader::new(payload);
    let direction = get_direction(&mut r)?;
    let edge_type = get_type(&mut r)?;
    let n = r.count(8)?;
    let seeds = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    r.finish()?;
    Ok(DegreeRequest {
        seeds,
        direction,
        edge_type,
    })
}

pub fn encode_degrees_response(resp: &DegreeResponse) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(resp.len() as u32);
    for d in resp {
        match d {
            None => w.u8(0),
            Some((l, g)) => {
                w.u8(1);
                w.u64(*l);
                w.u64(*g);
            }
        }
    }
    w.buf
}

pub fn decode_degrees_response(payload: &[u8]) -> Result<DegreeResponse> {
    let mut r = Reader::new(payload);
    let n = r.count(1)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        match r.u8()? {
            0 => out.push(None),
            1 => out.push(Some((r.u64()?, r.u64()?))),
            x => return Err(Error::Protocol(format!("bad presence byte {x}"))),
        }
    }
    r.finish()?;
    Ok(out)
}

pub fn encode_counters(c: &ShardCounters) -> Vec<u8> {
    let mut w = Writer::default();
    for x in [c.requests, c.seeds, c.edges_scanned, c.busy_nanos] {
        w.u64(x);
    }
    w.buf
}

pub fn decode_counters(payload: &[u8]) -> Result<ShardCounters> {
    let mut r = Reader::new(payload);
    let c = ShardCounters {
        requests: r.u64()?,
        seeds: r.u64()?,
        edges_scanned: r.u64()?,
        busy_nanos: r.u64()?,
    };
    r.finish()?;
    Ok(c)
}

/// Ping answers carry the shard id and partition count.
pub fn encode_pong(shard: u16, num_partitions: u16) -> Vec<u8> {
    let mut w = Writer::default();
    w.u16(shard);
    w.u16(num_partitions);
    w.buf
}

pub fn decode_pong(payload: &[u8]) -> Result<(u16, u16)> {
    let mut r = Reader::new(payload);
    let v = (r.u16()?, r.u16()?);
    r.finish()?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> GatherRequest {
        GatherRequest {
            seeds: vec![3, 99, u64::MAX],
            fanout: 15,
            hop: 2,
            direction: Direction::In,
            edge_type: Some(7),
            rng_seed: 0xDEAD_BEEF,
            rounding: Rounding::ExpectedFloor,
            quota: Quota::Explicit(vec![1, 0, 4]),
        }
    }

    #[test]
    fn header_layout() {
        let h = Header::new(1, 0x0102_0304_0506_0708, 5);
        let b = h.encode();
        assert_eq!(&b[0..4], b"GLRP");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..8], &[1, 0]);
        assert_eq!(&b[8..16], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&b[16..20], &[5, 0, 0, 0]);
        assert_eq!(Header::decode(&b), h);
    }

    #[test]
    fn gather_round_trip() {
        let req = request();
        assert_eq!(decode_gather(&encode_gather(&req)).unwrap(), req);
        let mut r2 = req.clone();
        r2.quota = Quota::GlobalDegrees(vec![10, 20, 30]);
        r2.edge_type = None;
        assert_eq!(decode_gather(&encode_gather(&r2)).unwrap(), r2);
    }

    #[test]
    fn gather_truncation_and_trailing_bytes_fail() {
        let bytes = encode_gather(&request());
        for cut in 0..bytes.len() {
            assert!(decode_gather(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_gather(&extra).is_err());
    }

    #[test]
    fn response_round_trip() {
        let resp = GatherResponse {
            shard: 3,
            partials: vec![
                None,
                Some(vec![]),
                Some(vec![Neighbor { vertex: 5, edge_id: 9, shard: 3, score: -0.25 }]),
            ],
        };
        assert_eq!(decode_gather_response(&encode_gather_response(&resp)).unwrap(), resp);
        let d: DegreeResponse = vec![None, Some((2, 8))];
        assert_eq!(decode_degrees_response(&encode_degrees_response(&d)).unwrap(), d);
        let c = ShardCounters { requests: 1, seeds: 2, edges_scanned: 3, busy_nanos: 4 };
        assert_eq!(decode_counters(&encode_counters(&c)).unwrap(), c);
    }

    #[test]
    fn huge_counts_are_rejected_without_allocating() {
        let mut w = Writer::default();
        w.u16(0);
        w.u32(u32::MAX);
        assert!(decode_gather_response(&w.buf).is_err());
    }

    #[test]
    fn read_frame_handles_eof() {
        let f = Frame::new(0, 7, vec![1, 2]);
        let bytes = f.to_bytes();
        let mut cur = std::io::Cursor::new(bytes.clone());
        assert_eq!(read_frame(&mut cur).unwrap(), Some(f));
        assert_eq!(read_frame(&mut cur).unwrap(), None);
        let mut short = std::io::Cursor::new(bytes[..10].to_vec());
        assert!(read_frame(&mut short).is_err());
    }
}
