//! Star-topology TCP backend. Rank 0 listens, gathers every contribution,
//! sums in rank order and broadcasts the result.
//!
//! Wire format, all little-endian:
//!
//! ```text
//! len       u32   bytes that follow
//! group_id  u64
//! seq       u64
//! phase_tag u32   reserved: HELLO 0xFFFF_FFF0, BARRIER 0xFFFF_FFF1, ERROR 0xFFFF_FFF2
//! rows      u64   HELLO: sender rank
//! cols      u64   HELLO: group size
//! payload         rows*cols f64 for data frames, UTF-8 text for ERROR
//! ```

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

use super::{reduce_in_rank_order, CommHandle, Contribution, OpKind, PhaseTag, Transport, DEFAULT_TIMEOUT};

const TAG_HELLO: u32 = 0xFFFF_FFF0;
const TAG_ERROR: u32 = 0xFFFF_FFF2;
const HEADER_LEN: usize = 36;
const MAX_FRAME: usize = u32::MAX as usize;

#[derive(Debug, Clone)]
pub struct TcpConfig {
    /// Applies to the join handshake and to every collective.
    pub timeout: Duration,
    pub group_id: u64,
}

impl Default for TcpConfig {
    fn default() -> Self {
        Self {
            timeout: DEFAULT_TIMEOUT,
            group_id: 0x4f4f_434e_4d46,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Frame {
    pub group_id: u64,
    pub seq: u64,
    pub tag: u32,
    pub rows: u64,
    pub cols: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    fn data(group_id: u64, seq: u64, tag: u32, m: &DenseMatrix) -> Self {
        let mut payload = Vec::with_capacity(m.data().len() * 8);
        for v in m.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Self {
            group_id,
            seq,
            tag,
            rows: m.rows() as u64,
            cols: m.cols() as u64,
            payload,
        }
    }

    fn error(group_id: u64, seq: u64, msg: &str) -> Self {
        Self {
            group_id,
            seq,
            tag: TAG_ERROR,
            rows: 0,
            cols: 0,
            payload: msg.as_bytes().to_vec(),
        }
    }

    fn matrix(&self) -> Result<DenseMatrix> {
        let (r, c) = (self.rows as usize, self.cols as usize);
        if self.payload.len() != r * c * 8 {
            return Err(Error::Comm(format!(
                "frame payload {} bytes does not match {r}x{c}",
                self.payload.len()
            )));
        }
        let data = self
            .payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        DenseMatrix::new(r, c, data)
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let len = HEADER_LEN + self.payload.len();
        if len > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
        }
        let mut buf = Vec::with_capacity(4 + len);
        buf.extend_from_slice(&(len as u32).to_le_bytes());
        buf.extend_from_slice(&self.group_id.to_le_bytes());
        buf.extend_from_slice(&self.seq.to_le_bytes());
        buf.extend_from_slice(&self.tag.to_le_bytes());
        buf.extend_from_slice(&self.rows.to_le_bytes());
        buf.extend_from_slice(&self.cols.to_le_bytes());
        buf.extend_from_slice(&self.payload);
        w.write_all(&buf)?;
        w.flush()
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> io::Result<Frame> {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len < HEADER_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "short frame"));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
        Ok(Frame {
            group_id: u64_at(0),
            seq: u64_at(8),
            tag: u32::from_le_bytes(buf[16..20].try_into().unwrap()),
            rows: u64_at(20),
            cols: u64_at(28),
            payload: buf[HEADER_LEN..].to_vec(),
        })
    }
}

fn io_err(e: io::Error, timeout: Duration, what: &str) -> Error {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => Error::Timeout(timeout),
        io::ErrorKind::UnexpectedEof | io::ErrorKind::ConnectionReset | io::ErrorKind::BrokenPipe => {
            Error::Comm(format!("lost peer during {what}: {e}"))
        }
        _ => Error::Comm(format!("{what}: {e}")),
    }
}

fn kind_tag(c: &Contribution) -> u32 {
    match c.kind {
        OpKind::Barrier => PhaseTag::BARRIER.0,
        OpKind::AllReduce => c.tag.0,
    }
}

fn contribution_from(frame: &Frame) -> Result<Contribution> {
    let kind = if frame.tag == PhaseTag::BARRIER.0 {
        OpKind::Barrier
    } else {
        OpKind::AllReduce
    };
    Ok(Contribution {
        seq: frame.seq,
        kind,
        tag: PhaseTag(frame.tag),
        buf: frame.matrix()?,
    })
}

pub(crate) enum TcpEndpoint {
    Root {
        peers: Vec<TcpStream>,
        cfg: TcpConfig,
    },
    Leaf {
        root: TcpStream,
        cfg: TcpConfig,
    },
}

/// Bound listener for rank 0. Binding separately from accepting lets callers
/// learn an ephemeral port before the other ranks start.
pub struct TcpRoot {
    listener: TcpListener,
}

impl TcpRoot {
    pub fn bind(addr: &str) -> Result<Self> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| Error::Comm(format!("bind {addr}: {e}")))?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Waits for ranks `1..size` to join and returns rank 0's handle.
    pub fn accept(self, size: usize, cfg: &TcpConfig) -> Result<CommHandle> {
        let deadline = Instant::now() + cfg.timeout;
        let mut peers: Vec<Option<TcpStream>> = (1..size).map(|_| None).collect();
        let mut joined = 0;
        self.listener.set_nonblocking(true)?;
        while joined < size - 1 {
            match self.listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(cfg.timeout))?;
                    stream.set_write_timeout(Some(cfg.timeout))?;
                    let hello = Frame::read_from(&mut stream)
                        .map_err(|e| io_err(e, cfg.timeout, "join handshake"))?;
                    let reject = |stream: &mut TcpStream, msg: String| {
                        let _ = Frame::error(cfg.group_id, 0, &msg).write_to(stream);
                        Error::Comm(msg)
                    };
                    if hello.tag != TAG_HELLO || hello.group_id != cfg.group_id {
                        return Err(reject(&mut stream, "unexpected handshake frame".into()));
                    }
                    let rank = hello.rows as usize;
                    if hello.cols as usize != size {
                        return Err(reject(
                            &mut stream,
                            format!("rank {rank} expects group of {}, root has {size}", hello.cols),
                        ));
                    }
                    if rank == 0 || rank >= size {
                        return Err(reject(&mut stream, format!("rank {rank} outside 1..{size}")));
                    }
                    if peers[rank - 1].is_some() {
                        return Err(reject(&mut stream, format!("duplicate rank {rank}")));
                    }
                    peers[rank - 1] = Some(stream);
                    joined += 1;
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Timeout(cfg.timeout));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(Error::Comm(format!("accept: {e}"))),
            }
        }
        let mut peers: Vec<TcpStream> = peers.into_iter().map(Option::unwrap).collect();
        for (i, p) in peers.iter_mut().enumerate() {
            Frame {
                group_id: cfg.group_id,
                seq: 0,
                tag: TAG_HELLO,
                rows: (i + 1) as u64,
                cols: size as u64,
                payload: Vec::new(),
            }
            .write_to(p)
            .map_err(|e| io_err(e, cfg.timeout, "join acknowledgement"))?;
        }
        Ok(CommHandle::new(
            0,
            size,
            Transport::Tcp(TcpEndpoint::Root {
                peers,
                cfg: cfg.clone(),
            }),
        ))
    }
}

/// Connects rank `rank` to the root at `root_addr`, retrying until the timeout.
pub(crate) fn join(root_addr: &str, rank: usize, size: usize, cfg: &TcpConfig) -> Result<CommHandle> {
    let deadline = Instant::now() + cfg.timeout;
    let addrs: Vec<SocketAddr> = root_addr
        .to_socket_addrs()
        .map_err(|e| Error::Comm(format!("resolve {root_addr}: {e}")))?
        .collect();
    let mut stream = loop {
        let attempt = addrs
            .iter()
            .find_map(|a| TcpStream::connect_timeout(a, Duration::from_millis(500)).ok());
        if let Some(s) = attempt {
            break s;
        }
        if Instant::now() >= deadline {
            return Err(Error::Timeout(cfg.timeout));
        }
        std::thread::sleep(Duration::from_millis(20));
    };
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(cfg.timeout))?;
    stream.set_write_timeout(Some(cfg.timeout))?;
    Frame {
        group_id: cfg.group_id,
        seq: 0,
        tag: TAG_HELLO,
        rows: rank as u64,
        cols: size as u64,
        payload: Vec::new(),
    }
    .write_to(&mut stream)
    .map_err(|e| io_err(e, cfg.timeout, "join handshake"))?;
    let ack = Frame::read_from(&mut stream).map_err(|e| io_err(e, cfg.timeout, "join handshake"))?;
    if ack.tag == TAG_ERROR {
        return Err(Error::Comm(format!(
            "root rejected join: {}",
            String::from_utf8_lossy(&ack.payload)
        )));
    }
    if ack.tag != TAG_HELLO || ack.rows as usize != rank {
        return Err(Error::Comm("bad join acknowledgement".into()));
    }
    Ok(CommHandle::new(
        rank,
        size,
        Transport::Tcp(TcpEndpoint::Leaf {
            root: stream,
            cfg: cfg.clone(),
        }),
    ))
}

impl TcpEndpoint {
    pub(crate) fn poison(&mut self, reason: &str) {
        match self {
            TcpEndpoint::Root { peers, cfg } => {
                for p in peers.iter_mut() {
                    let _ = Frame::error(cfg.group_id, u64::MAX, reason).write_to(p);
                }
            }
            TcpEndpoint::Leaf { root, cfg } => {
                let _ = Frame::error(cfg.group_id, u64::MAX, reason).write_to(root);
            }
        }
    }

    pub(crate) fn exchange(&mut self, c: Contribution) -> Result<DenseMatrix> {
        match self {
            TcpEndpoint::Root { peers, cfg } => {
                let mut parts = Vec::with_capacity(peers.len() + 1);
                let seq = c.seq;
                parts.push(c);
                for (i, p) in peers.iter_mut().enumerate() {
                    let frame = Frame::read_from(p)
                        .map_err(|e| io_err(e, cfg.timeout, &format!("collective with rank {}", i + 1)))?;
                    if frame.tag == TAG_ERROR {
                        return Err(Error::Poisoned(format!(
                            "rank {} failed: {}",
                            i + 1,
                            String::from_utf8_lossy(&frame.payload)
                        )));
                    }
                    if frame.group_id != cfg.group_id {
                        return Err(Error::Comm(format!("rank {} sent frame for another group", i + 1)));
                    }
                    parts.push(contribution_from(&frame)?);
                }
                let refs: Vec<&Contribution> = parts.iter().collect();
                let sum = reduce_in_rank_order(&refs).map_err(Error::Comm)?;
                let reply = Frame::data(cfg.group_id, seq, kind_tag(&parts[0]), &sum);
                for p in peers.iter_mut() {
                    reply
                        .write_to(p)
                        .map_err(|e| io_err(e, cfg.timeout, "broadcast"))?;
                }
                Ok(sum)
            }
            TcpEndpoint::Leaf { root, cfg } => {
                let seq = c.seq;
                Frame::data(cfg.group_id, seq, kind_tag(&c), &c.buf)
                    .write_to(root)
                    .map_err(|e| io_err(e, cfg.timeout, "send to root"))?;
                let reply = Frame::read_from(root).map_err(|e| io_err(e, cfg.timeout, "receive from root"))?;
                if reply.tag == TAG_ERROR {
                    return Err(Error::Poisoned(String::from_utf8_lossy(&reply.payload).into_owned()));
                }
                if reply.seq != seq {
                    return Err(Error::Comm(format!(
                        "root replied for seq {} while waiting on seq {seq}",
                        reply.seq
                    )));
                }
                reply.matrix()
            }
        }
    }
}

/// Builds an `n`-rank TCP group over 127.0.0.1 inside this process. Each
/// handle owns a real socket; used for tests and `--spawn-local`-style runs.
pub fn tcp_local_group(n: usize, cfg: &TcpConfig) -> Result<Vec<CommHandle>> {
    let root = TcpRoot::bind("127.0.0.1:0")?;
    let addr = root.local_addr()?.to_string();
    std::thread::scope(|s| {
        let leaves: Vec<_> = (1..n)
            .map(|rank| {
                let addr = addr.clone();
                s.spawn(move || join(&addr, rank, n, cfg))
            })
            .collect();
        let root_handle = root.accept(n, cfg);
        let mut out = vec![root_handle?];
        for l in leaves {
            out.push(
                l.join()
                    .map_err(|_| Error::Comm("join thread panicked".into()))??,
            );
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::super::run_workers;
    use super::*;

    #[test]
    fn frame_round_trip() {
        let m = DenseMatrix::from_rows(&[[1.0, -2.5], [3.25, 0.0]]);
        let f = Frame::data(9, 4, 1, &m);
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + HEADER_LEN + 32);
        let back = Frame::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.matrix().unwrap(), m);
    }

    #[test]
    fn local_group_reduces() {
        let cfg = TcpConfig {
            timeout: Duration::from_secs(10),
            ..TcpConfig::default()
        };
        let hs = tcp_local_group(3, &cfg).unwrap();
        let out = run_workers(hs, |mut h| {
            let b = DenseMatrix::from_rows(&[[h.rank() as f64, 1.0]]);
            let s = h.all_reduce_sum(&b, PhaseTag::W_UPDATE)?;
            h.barrier()?;
            Ok(s)
        });
        for r in out {
            assert_eq!(r.unwrap(), DenseMatrix::from_rows(&[[3.0, 3.0]]));
        }
    }

    #[test]
    fn absent_peer_times_out() {
        let cfg = TcpConfig {
            timeout: Duration::from_millis(200),
            ..TcpConfig::default()
        };
        let root = TcpRoot::bind("127.0.0.1:0").unwrap();
        assert!(matches!(root.accept(2, &cfg), Err(Error::Timeout(_))));
    }

    #[test]
    fn duplicate_rank_rejected() {
        let cfg = TcpConfig {
            timeout: Duration::from_secs(5),
            ..TcpConfig::default()
        };
        let root = TcpRoot::bind("127.0.0.1:0").unwrap();
        let addr = root.local_addr().unwrap().to_string();
        let res = std::thread::scope(|s| {
            let a = {
                let addr = addr.clone();
                let cfg = cfg.clone();
                s.spawn(move || join(&addr, 1, 3, &cfg))
            };
            let b = {
                let addr = addr.clone();
                let cfg = cfg.clone();
                s.spawn(move || {
                    std::thread::sleep(Duration::from_millis(50));
                    join(&addr, 1, 3, &cfg)
                })
            };
            let r = root.accept(3, &cfg);
            let _ = a.join();
            let _ = b.join();
            r
        });
        match res {
            Err(Error::Comm(msg)) => assert!(msg.contains("duplicate"), "{msg}"),
            other => panic!("expected duplicate-rank error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_sequence_frame_is_rejected() {
        let cfg = TcpConfig {
            timeout: Duration::from_secs(5),
            ..TcpConfig::default()
        };
        let root = TcpRoot::bind("127.0.0.1:0").unwrap();
        let addr = root.local_addr().unwrap().to_string();
        std::thread::scope(|s| {
            let rogue = s.spawn(|| {
                // speak the protocol by hand and skip ahead to seq 7
                let mut st = TcpStream::connect(&addr).unwrap();
                Frame { group_id: cfg.group_id, seq: 0, tag: TAG_HELLO, rows: 1, cols: 2, payload: vec![] }
                    .write_to(&mut st)
                    .unwrap();
                let _ack = Frame::read_from(&mut st).unwrap();
                Frame::data(cfg.group_id, 7, PhaseTag::W_UPDATE.0, &DenseMatrix::zeros(1, 1))
                    .write_to(&mut st)
                    .unwrap();
                Frame::read_from(&mut st).unwrap()
            });
            let mut h0 = root.accept(2, &cfg).unwrap();
            let err = h0.all_reduce_sum(&DenseMatrix::zeros(1, 1), PhaseTag::W_UPDATE).unwrap_err();
            assert!(err.to_string().contains("sequence"), "{err}");
            assert!(h0.is_poisoned());
            let reply = rogue.join().unwrap();
            assert_eq!(reply.tag, TAG_ERROR);
        });
    }
}
