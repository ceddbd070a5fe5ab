//! TCP backend. Each party dials every peer once for its outgoing direction
//! and accepts one connection per peer for the incoming direction, so there is
//! exactly one connection per ordered pair. A dialer announces itself with a
//! 4-byte big-endian party index before any frame.

use super::frame::MAX_BODY;
use super::Link;
use crate::error::{Error, Result};
use crossbeam_channel::{unbounded, Sender};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

#[derive(Clone, Debug)]
pub struct TcpConfig {
    pub me: usize,
    /// Listen address of every party that takes part, by index.
    pub addrs: HashMap<usize, SocketAddr>,
    /// Peers this party exchanges messages with.
    pub peers: Vec<usize>,
    pub connect_timeout: Duration,
    pub read_timeout: Option<Duration>,
}

pub struct TcpLink {
    out: HashMap<usize, Sender<Vec<u8>>>,
    writers: Vec<JoinHandle<()>>,
    inc: HashMap<usize, TcpStream>,
}

impl TcpLink {
    /// Bind, dial all peers, accept all peers. Blocks until every connection
    /// is up or `connect_timeout` passes.
    pub fn connect(cfg: &TcpConfig) -> Result<TcpLink> {
        let own = cfg
            .addrs
            .get(&cfg.me)
            .ok_or_else(|| Error::Invalid(format!("no address for party {}", cfg.me)))?;
        let listener = TcpListener::bind(own)
            .map_err(|e| Error::Transport(format!("bind {own}: {e}")))?;
        TcpLink::with_listener(cfg, listener)
    }

    pub fn with_listener(cfg: &TcpConfig, listener: TcpListener) -> Result<TcpLink> {
        let deadline = Instant::now() + cfg.connect_timeout;
        let expected = cfg.peers.clone();
        let accept = thread::spawn(move || -> Result<HashMap<usize, TcpStream>> {
            listener.set_nonblocking(true)?;
            let mut got = HashMap::new();
            while got.len() < expected.len() {
                match listener.accept() {
                    Ok((mut s, _)) => {
                        s.set_nonblocking(false)?;
                        s.set_read_timeout(Some(Duration::from_secs(5)))?;
                        let mut id = [0u8; 4];
                        s.read_exact(&mut id)?;
                        let id = u32::from_be_bytes(id) as usize;
                        if !expected.contains(&id) || got.contains_key(&id) {
                            return Err(Error::Transport(format!(
                                "unexpected connection claiming party {id}"
                            )));
                        }
                        s.set_read_timeout(None)?;
                        got.insert(id, s);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        if Instant::now() > deadline {
                            return Err(Error::Transport("timed out accepting peers".into()));
                        }
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(got)
        });

        let mut out = HashMap::new();
        let mut writers = Vec::new();
        for &p in &cfg.peers {
            let addr = cfg
                .addrs
                .get(&p)
                .ok_or_else(|| Error::Invalid(format!("no address for party {p}")))?;
            let mut s = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() > deadline => {
                        return Err(Error::Transport(format!("connect to party {p} at {addr}: {e}")))
                    }
                    Err(_) => thread::sleep(Duration::from_millis(20)),
                }
            };
            s.set_nodelay(true)?;
            s.write_all(&(cfg.me as u32).to_be_bytes())?;
            let (tx, rx) = unbounded::<Vec<u8>>();
            writers.push(thread::spawn(move || {
                for frame in rx {
                    if s.write_all(&frame).is_err() {
                        break;
                    }
                }
                let _ = s.shutdown(std::net::Shutdown::Write);
            }));
            out.insert(p, tx);
        }

        let inc = accept
            .join()
            .map_err(|_| Error::Transport("accept thread panicked".into()))??;
        for s in inc.values() {
            s.set_read_timeout(cfg.read_timeout)?;
        }
        Ok(TcpLink { out, writers, inc })
    }
}

impl Link for TcpLink {
    fn send(&mut self, peer: usize, frame: Vec<u8>) -> Result<()> {
        self.out
            .get(&peer)
            .ok_or_else(|| Error::Transport(format!("no connection to party {peer}")))?
            .send(frame)
            .map_err(|_| Error::Transport(format!("writer for party {peer} stopped")))
    }

    fn recv(&mut self, peer: usize) -> Result<Vec<u8>> {
        let s = self
            .inc
            .get_mut(&peer)
            .ok_or_else(|| Error::Transport(format!("no connection from party {peer}")))?;
        let mut len = [0u8; 4];
        s.read_exact(&mut len)
            .map_err(|e| Error::Transport(format!("party {peer}: {e}")))?;
        let body = u32::from_be_bytes(len) as usize;
        if body > MAX_BODY {
            return Err(Error::Protocol(format!("frame length {body} from party {peer}")));
        }
        let mut buf = vec![0u8; 4 + body];
        buf[..4].copy_from_slice(&len);
        s.read_exact(&mut buf[4..])
            .map_err(|e| Error::Transport(format!("party {peer}: truncated frame: {e}")))?;
        Ok(buf)
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        self.out.clear();
        for w in self.writers.drain(..) {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ring::Ring;
    use crate::scheme::{Scheme, TruncMode};
    use crate::transport::{Hello, MsgType, Network, PROTOCOL_VERSION};

    #[test]
    fn loopback_three_parties() {
        let listeners: Vec<TcpListener> =
            (0..3).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
        let addrs: HashMap<usize, SocketAddr> = listeners
            .iter()
            .enumerate()
            .map(|(i, l)| (i, l.local_addr().unwrap()))
            .collect();
        let ring = Ring::prime64();
        let hello = Hello {
            version: PROTOCOL_VERSION,
            scheme: Scheme::Semi3pc,
            trunc: TruncMode::Det,
            ring,
            session: 42,
        };
        let hs: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let addrs = addrs.clone();
                thread::spawn(move || {
                    let peers: Vec<usize> = (0..3).filter(|&j| j != i).collect();
                    let cfg = TcpConfig {
                        me: i,
                        addrs,
                        peers: peers.clone(),
                        connect_timeout: Duration::from_secs(10),
                        read_timeout: Some(Duration::from_secs(10)),
                    };
                    let link = TcpLink::with_listener(&cfg, l).unwrap();
                    let mut net = Network::new(i, 42, peers.clone(), Box::new(link));
                    net.handshake(&hello).unwrap();
                    let sends = peers
                        .iter()
                        .map(|&p| (p, ring.encode_vec(&[i as u128, 1, 2, 3])))
                        .collect();
                    let got = net.exchange(MsgType::Data, sends, &peers).unwrap();
                    got.iter()
                        .map(|b| ring.decode_vec(b).unwrap()[0])
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for (i, h) in hs.into_iter().enumerate() {
            let want: Vec<u128> = (0..3u128).filter(|&j| j != i as u128).collect();
            assert_eq!(h.join().unwrap(), want);
        }
    }
}
