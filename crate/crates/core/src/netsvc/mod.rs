//! Binary TCP service exposing one shard's gather operations.
//!
//! Every frame is a 20-byte header (`GLRP`, version, opcode, request id,
//! payload length) followed by the payload. A response echoes the request id
//! with opcode `request | 0x8000`, or `0xFFFF` for an error.

pub mod codec;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};

use crate::error::{Error, Result};
use crate::partition::PartitionId;
use crate::pstore::PartitionStore;
use crate::sampler::{
    DegreeRequest, DegreeResponse, GatherRequest, GatherResponse, GatherShard, SamplingConfig,
    Quota, Shard, ShardCounters,
};
use codec::{ErrorCode, Frame, Header, Opcode, ERROR_OPCODE, HEADER_LEN, MAGIC, MAX_PAYLOAD, RESPONSE_BIT, VERSION};

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shard: Arc<Shard>,
    stop: Arc<AtomicBool>,
    conns: Arc<Connections>,
    accept: Option<JoinHandle<()>>,
}

/// Open connections, so shutdown can close them.
#[derive(Default)]
struct Connections {
    next: AtomicU64,
    open: Mutex<HashMap<u64, TcpStream>>,
}

impl Connections {
    fn add(&self, s: &TcpStream) -> Option<u64> {
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        let clone = s.try_clone().ok()?;
        self.open.lock().unwrap_or_else(|p| p.into_inner()).insert(id, clone);
        Some(id)
    }

    fn remove(&self, id: u64) {
        self.open.lock().unwrap_or_else(|p| p.into_inner()).remove(&id);
    }

    fn close_all(&self) {
        for (_, s) in self.open.lock().unwrap_or_else(|p| p.into_inner()).drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    /// Stops accepting connections, closes open ones and waits for the
    /// accept loop to exit.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        if let Some(h) = self.accept.take() {
            self.stop.store(true, Ordering::SeqCst);
            // wake the blocking accept
            let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
            let _ = h.join();
            self.conns.close_all();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves `store` on `bind` (e.g. `127.0.0.1:0`).
pub fn serve(store: PartitionStore, bind: impl ToSocketAddrs) -> Result<ServerHandle> {
    serve_shard(Arc::new(Shard::new(store)), bind)
}

pub fn serve_shard(shard: Arc<Shard>, bind: impl ToSocketAddrs) -> Result<ServerHandle> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Connections::default());
    let accept = {
        let shard = Arc::clone(&shard);
        let stop = Arc::clone(&stop);
        let conns = Arc::clone(&conns);
        std::thread::Builder::new()
            .name(format!("glisp-accept-{addr}"))
            .spawn(move || accept_loop(listener, shard, stop, conns))?
    };
    Ok(ServerHandle {
        addr,
        shard,
        stop,
        conns,
        accept: Some(accept),
    })
}

fn accept_loop(listener: TcpListener, shard: Arc<Shard>, stop: Arc<AtomicBool>, conns: Arc<Connections>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let shard = Arc::clone(&shard);
                let conns = Arc::clone(&conns);
                let spawned = std::thread::Builder::new()
                    .name("glisp-conn".into())
                    .spawn(move || {
                        let id = conns.add(&stream);
                        if let Err(e) = handle_connection(stream, &shard) {
                            debug!("connection closed: {e}");
                        }
                        if let Some(id) = id {
                            conns.remove(id);
                        }
                    });
                if let Err(e) = spawned {
                    warn!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn handle_connection(mut stream: TcpStream, shard: &Shard) -> Result<()> {
    stream.set_nodelay(true)?;
    loop {
        let mut hb = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match stream.read(&mut hb[got..])? {
                0 if got == 0 => return Ok(()),
                0 => return Err(Error::Protocol("stream ended inside a header".into())),
                n => got += n,
            }
        }
        let header = Header::decode(&hb);
        if header.payload_len > MAX_PAYLOAD {
            let msg = format!("payload of {} bytes exceeds {MAX_PAYLOAD}", header.payload_len);
            send_error(&mut stream, header.request_id, ErrorCode::TooLarge, &msg)?;
            let _ = stream.shutdown(Shutdown::Both);
            return Err(Error::Protocol(msg));
        }
        let mut payload = vec![0u8; header.payload_len as usize];
        stream.read_exact(&mut payload)?;

        let reply = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            dispatch(&header, &payload, shard)
        }))
        .unwrap_or_else(|_| Err((ErrorCode::Internal, "handler panicked".to_string())));
        match reply {
            Ok(frame) => frame.write_to(&mut stream)?,
            Err((code, msg)) => send_error(&mut stream, header.request_id, code, &msg)?,
        }
    }
}

fn send_error(stream: &mut TcpStream, request_id: u64, code: ErrorCode, msg: &str) -> Result<()> {
    Frame::new(ERROR_OPCODE, request_id, codec::error_payload(code, msg)).write_to(stream)?;
    Ok(())
}

fn dispatch(header: &Header, payload: &[u8], shard: &Shard) -> std::result::Result<Frame, (ErrorCode, String)> {
    if header.magic != MAGIC {
        return Err((ErrorCode::BadMagic, format!("bad magic {:?}", header.magic)));
    }
    if header.version != VERSION {
        return Err((ErrorCode::BadVersion, format!("unsupported version {}", header.version)));
    }
    let op = Opcode::from_u16(header.opcode)
        .ok_or_else(|| (ErrorCode::UnknownOpcode, format!("unknown opcode {}", header.opcode)))?;
    let bad = |e: Error| (ErrorCode::BadPayload, e.to_string());
    let failed = |e: Error| match e {
        Error::InvalidArgument(_) | Error::Protocol(_) => (ErrorCode::BadPayload, e.to_string()),
        other => (ErrorCode::Internal, other.to_string()),
    };
    let body = match op {
        Opcode::Ping => {
            if !payload.is_empty() {
                return Err((ErrorCode::BadPayload, "ping carries no payload".into()));
            }
            codec::encode_pong(shard.shard_id(), shard.store().num_partitions() as u16)
        }
        Opcode::UniformGather | Opcode::WeightedGather => {
            let req = codec::decode_gather(payload).map_err(bad)?;
            let resp = if op == Opcode::UniformGather {
                shard.uniform_gather(&req)
            } else {
                shard.weighted_gather(&req)
            }
            .map_err(failed)?;
            codec::encode_gather_response(&resp)
        }
        Opcode::Degrees => {
            let req = codec::decode_degrees(payload).map_err(bad)?;
            codec::encode_degrees_response(&shard.degrees(&req).map_err(failed)?)
        }
        Opcode::LoadCounters => {
            if !payload.is_empty() {
                return Err((ErrorCode::BadPayload, "load_counters carries no payload".into()));
            }
            codec::encode_counters(&shard.counters().map_err(failed)?)
        }
    };
    Ok(Frame::new(header.opcode | RESPONSE_BIT, header.request_id, body))
}

/// Client for one remote shard. Requests are idempotent, so a failed call is
/// retried once on a fresh connection.
pub struct RemoteShard {
    addr: SocketAddr,
    shard: PartitionId,
    num_partitions: usize,
    timeout: Duration,
    conn: Mutex<Option<TcpStream>>,
    next_id: AtomicU64,
}

impl std::fmt::Debug for RemoteShard {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteShard")
            .field("addr", &self.addr)
            .field("shard", &self.shard)
            .finish()
    }
}

impl RemoteShard {
    /// Connects and learns the shard id with a ping.
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::InvalidArgument("address resolved to nothing".into()))?;
        let mut client = RemoteShard {
            addr,
            shard: PartitionId::MAX,
            num_partitions: 0,
            timeout,
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
        };
        let pong = client.call(Opcode::Ping, Vec::new())?;
        let (shard, p) = codec::decode_pong(&pong)?;
        client.shard = shard;
        client.num_partitions = p as usize;
        Ok(client)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn num_partitions(&self) -> usize {
        self.num_partitions
    }

    pub fn ping(&self) -> Result<()> {
        self.call(Opcode::Ping, Vec::new()).map(|_| ())
    }

    fn unavailable(&self, reason: impl std::fmt::Display) -> Error {
        Error::ShardUnavailable {
            shard: self.shard,
            reason: format!("{} ({})", reason, self.addr),
        }
    }

    fn open(&self) -> Result<TcpStream> {
        let s = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(|e| self.unavailable(e))?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_write_timeout(Some(self.timeout))?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    fn call(&self, op: Opcode, payload: Vec<u8>) -> Result<Vec<u8>> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = Frame::new(op as u16, id, payload);
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let mut last = None;
        for attempt in 0..2 {
            if conn.is_none() {
                match self.open() {
                    Ok(s) => *conn = Some(s),
                    Err(e) => {
                        last = Some(e);
                        continue;
                    }
                }
            }
            let stream = conn.as_mut().expect("connection opened above");
            match exchange(stream, &frame) {
                Ok(reply) => return self.check_reply(op, id, reply),
                Err(e) => {
                    debug!("shard {} attempt {attempt} failed: {e}", self.shard);
                    *conn = None;
                    last = Some(self.unavailable(e));
                }
            }
        }
        Err(last.unwrap_or_else(|| self.unavailable("no attempt made")))
    }

    fn check_reply(&self, op: Opcode, id: u64, reply: Frame) -> Result<Vec<u8>> {
        if reply.header.request_id != id {
            return Err(Error::Protocol(format!(
                "response id {} for request {id}",
                reply.header.request_id
            )));
        }
        if reply.header.opcode == ERROR_OPCODE {
            let (code, msg) = codec::decode_error(&reply.payload)?;
            return Err(Error::Protocol(format!("shard {} error {code}: {msg}", self.shard)));
        }
        if reply.header.opcode != op as u16 | RESPONSE_BIT {
            return Err(Error::Protocol(format!("unexpected opcode {:#x}", reply.header.opcode)));
        }
        Ok(reply.payload)
    }
}

fn exchange(stream: &mut TcpStream, frame: &Frame) -> Result<Frame> {
    stream.write_all(&frame.to_bytes())?;
    stream.flush()?;
    codec::read_frame(stream)?.ok_or_else(|| Error::Protocol("server closed the connection".into()))
}

impl GatherShard for RemoteShard {
    fn shard_id(&self) -> PartitionId {
        self.shard
    }

    fn uniform_gather(&self, req: &GatherRequest) -> Result<GatherResponse> {
        let reply = self.call(Opcode::UniformGather, codec::encode_gather(req))?;
        codec::decode_gather_response(&reply)
    }

    fn weighted_gather(&self, req: &GatherRequest) -> Result<GatherResponse> {
        let reply = self.call(Opcode::WeightedGather, codec::encode_gather(req))?;
        codec::decode_gather_response(&reply)
    }

    fn degrees(&self, req: &DegreeRequest) -> Result<DegreeResponse> {
        let reply = self.call(Opcode::Degrees, codec::encode_degrees(req))?;
        codec::decode_degrees_response(&reply)
    }

    fn counters(&self) -> Result<ShardCounters> {
        let reply = self.call(Opcode::LoadCounters, Vec::new())?;
        codec::decode_counters(&reply)
    }
}

/// Sends the same one-hop gather to every client in parallel and returns the
/// responses ordered by shard id. Seeds a shard does not host come back as
/// `None` partials.
pub fn remote_gather(
    clients: &[RemoteShard],
    seeds: &[u64],
    fanout: u32,
    hop: u32,
    cfg: &SamplingConfig,
) -> Result<Vec<GatherResponse>> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Ok(clients
            .iter()
            .map(|c| GatherResponse { shard: c.shard_id(), partials: Vec::new() })
            .collect());
    }
    let req = GatherRequest {
        seeds: seeds.to_vec(),
        fanout,
        hop,
        direction: cfg.direction,
        edge_type: cfg.edge_type,
        rng_seed: cfg.seed,
        rounding: cfg.rounding,
        quota: Quota::Proportional,
    };
    let mut out = std::thread::scope(|scope| {
        let handles: Vec<_> = clients
            .iter()
            .map(|c| {
                let req = &req;
                scope.spawn(move || {
                    if cfg.weighted {
                        c.weighted_gather(req)
                    } else {
                        c.uniform_gather(req)
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gather thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    out.sort_by_key(|r| r.shard);
    Ok(out)
}
