//! TCP transport: one server, K client processes, one round in flight.
//!
//! Handshake: the client sends HELLO (config digest, iteration count, shard
//! size); the server answers HELLO (run seed) or BYE (rejection reason).
//! Each round the server sends GLOBAL_PARAMS to the selected clients, each
//! replies LOCAL_PARAMS then METRICS. BYE ends the run.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::checkpoint::{config_digest, deserialize_checked, digest_hex, serialize_params};
use super::wire::{read_frame, write_frame, Frame, MessageType};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federated::{
    client_update, run_federation, ClientResult, ClientSpec, FedConfig, Federation, RoundExecutor,
    RoundMetrics,
};
use crate::models::{Model, ModelConfig};
use crate::tensor::ParameterSet;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(300);

const REJECT_DIGEST: u8 = 1;
const REJECT_OTHER: u8 = 2;

#[derive(Clone, Debug)]
pub struct ServerOptions {
    /// Per-round (and handshake) deadline.
    pub timeout: Duration,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientHello {
    pub id: usize,
    pub iterations: usize,
    pub samples: usize,
}

/// Bytes moved in one round. Parameter traffic counts full frames.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RoundTraffic {
    pub round: usize,
    pub downlink_bytes: u64,
    pub uplink_bytes: u64,
    pub metrics_bytes: u64,
}

impl RoundTraffic {
    pub fn param_bytes(&self) -> u64 {
        self.downlink_bytes + self.uplink_bytes
    }
}

struct Connection {
    id: usize,
    stream: TcpStream,
}

/// Server side of the transport, usable as a [`RoundExecutor`].
pub struct SocketServer {
    conns: Vec<Connection>,
    config: ModelConfig,
    traffic: Vec<RoundTraffic>,
}

fn hello_payload(digest: &[u8; 32], iterations: usize, samples: usize) -> Vec<u8> {
    let mut p = digest.to_vec();
    p.extend_from_slice(&(iterations as u32).to_le_bytes());
    p.extend_from_slice(&(samples as u64).to_le_bytes());
    p
}

fn parse_hello(frame: &Frame) -> Result<([u8; 32], ClientHello)> {
    if frame.kind != MessageType::Hello || frame.payload.len() != 44 {
        return Err(Error::Protocol(format!(
            "expected a 44-byte HELLO, got {:?} with {} bytes",
            frame.kind,
            frame.payload.len()
        )));
    }
    let p = &frame.payload;
    let digest: [u8; 32] = p[..32].try_into().expect("32 bytes");
    let iterations = u32::from_le_bytes(p[32..36].try_into().expect("4 bytes")) as usize;
    let samples = u64::from_le_bytes(p[36..44].try_into().expect("8 bytes")) as usize;
    Ok((
        digest,
        ClientHello {
            id: frame.client as usize,
            iterations,
            samples,
        },
    ))
}

fn reject(stream: &mut TcpStream, code: u8, extra: &[u8], why: &str) {
    let mut payload = vec![code];
    payload.extend_from_slice(extra);
    payload.extend_from_slice(why.as_bytes());
    if let Err(e) = write_frame(stream, &Frame::new(MessageType::Bye, 0, 0, payload)) {
        log::warn!("could not deliver rejection: {e}");
    }
}

fn expect(frame: &Frame, kind: MessageType, round: usize, id: usize) -> Result<()> {
    if frame.kind != kind || frame.round as usize != round || frame.client as usize != id {
        return Err(Error::Protocol(format!(
            "expected {kind:?} for round {round} client {id}, got {:?} for round {} client {}",
            frame.kind, frame.round, frame.client
        )));
    }
    Ok(())
}

impl SocketServer {
    /// Accepts clients until all `fed.clients` ids have completed the
    /// handshake. Clients with a foreign config digest, an unknown or
    /// duplicate id, or an empty shard are rejected and the server keeps
    /// listening.
    pub fn accept(
        listener: &TcpListener,
        config: &ModelConfig,
        fed: &FedConfig,
        opts: &ServerOptions,
    ) -> Result<(SocketServer, Vec<ClientHello>)> {
        let digest = config_digest(config);
        let deadline = Instant::now() + opts.timeout;
        listener.set_nonblocking(true)?;
        let mut slots: Vec<Option<(Connection, ClientHello)>> = (0..fed.clients).map(|_| None).collect();
        while slots.iter().any(Option::is_none) {
            let (mut stream, peer) = match listener.accept() {
                Ok(s) => s,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let missing: Vec<usize> =
                            (0..fed.clients).filter(|&k| slots[k].is_none()).collect();
                        return Err(Error::Protocol(format!(
                            "timed out after {:?} waiting for clients {missing:?}",
                            opts.timeout
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            stream.set_nonblocking(false)?;
            stream.set_read_timeout(Some(opts.timeout))?;
            stream.set_write_timeout(Some(opts.timeout))?;
            stream.set_nodelay(true)?;
            let (their, hello) = match read_frame(&mut stream).and_then(|f| parse_hello(&f)) {
                Ok(h) => h,
                Err(e) => {
                    log::warn!("dropping connection from {peer}: {e}");
                    continue;
                }
            };
            if their != digest {
                log::warn!(
                    "rejecting client {} from {peer}: config digest {} does not match {}",
                    hello.id,
                    digest_hex(&their),
                    digest_hex(&digest)
                );
                reject(&mut stream, REJECT_DIGEST, &digest, "config digest mismatch");
                continue;
            }
            let problem = if hello.id >= fed.clients {
                Some(format!("client id {} out of range for {} clients", hello.id, fed.clients))
            } else if slots[hello.id].is_some() {
                Some(format!("client id {} already connected", hello.id))
            } else if hello.samples == 0 || hello.iterations == 0 {
                Some("client reported an empty shard or zero iterations".to_string())
            } else {
                None
            };
            if let Some(why) = problem {
                log::warn!("rejecting client from {peer}: {why}");
                reject(&mut stream, REJECT_OTHER, &[], &why);
                continue;
            }
            write_frame(
                &mut stream,
                &Frame::new(MessageType::Hello, 0, hello.id as u32, fed.seed.to_le_bytes().to_vec()),
            )?;
            log::info!(
                "client {} connected from {peer} (C={}, n={})",
                hello.id,
                hello.iterations,
                hello.samples
            );
            let id = hello.id;
            slots[id] = Some((Connection { id, stream }, hello));
        }
        let (conns, hellos) = slots.into_iter().map(|s| s.expect("all slots filled")).unzip();
        Ok((
            SocketServer {
                conns,
                config: config.clone(),
                traffic: Vec::new(),
            },
            hellos,
        ))
    }

    pub fn traffic(&self) -> &[RoundTraffic] {
        &self.traffic
    }

    fn exchange(
        conn: &mut Connection,
        round: usize,
        global: &[u8],
        config: &ModelConfig,
    ) -> Result<(ClientResult, u64, u64, u64)> {
        let id = conn.id;
        let down = write_frame(
            &mut conn.stream,
            &Frame::new(MessageType::GlobalParams, round as u32, id as u32, global.to_vec()),
        )?;
        let local = read_frame(&mut conn.stream)?;
        expect(&local, MessageType::LocalParams, round, id)?;
        let params = deserialize_checked(&local.payload, config)?;
        let metrics = read_frame(&mut conn.stream)?;
        expect(&metrics, MessageType::Metrics, round, id)?;
        let loss_bits: [u8; 8] = metrics
            .payload
            .as_slice()
            .try_into()
            .map_err(|_| Error::Protocol("METRICS payload must be one f64".into()))?;
        let loss = f64::from_le_bytes(loss_bits) as f32;
        Ok((
            ClientResult { id, params, loss },
            down as u64,
            local.wire_len() as u64,
            metrics.wire_len() as u64,
        ))
    }
}

impl RoundExecutor for SocketServer {
    fn run_round(
        &mut self,
        round: usize,
        global: &ParameterSet,
        selected: &[usize],
    ) -> Result<Vec<ClientResult>> {
        let bytes = serialize_params(global, &self.config)?;
        let config = &self.config;
        let outcomes: Vec<Result<_>> = thread::scope(|s| {
            let handles: Vec<_> = self
                .conns
                .iter_mut()
                .filter(|c| selected.contains(&c.id))
                .map(|conn| {
                    let bytes = &bytes;
                    s.spawn(move || {
                        let id = conn.id;
                        Self::exchange(conn, round, bytes, config).map_err(|e| {
                            log::error!("round {round}: dropping client {id}: {e}");
                            let _ = conn.stream.shutdown(std::net::Shutdown::Both);
                            e.for_client(id)
                        })
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client exchange thread panicked"))
                .collect()
        });
        let mut traffic = RoundTraffic {
            round,
            ..Default::default()
        };
        let mut results = Vec::with_capacity(selected.len());
        for outcome in outcomes {
            let (result, down, up, metrics) = outcome?;
            traffic.downlink_bytes += down;
            traffic.uplink_bytes += up;
            traffic.metrics_bytes += metrics;
            results.push(result);
        }
        log::info!(
            "round {round}: downlink {} B, uplink {} B, metrics {} B",
            traffic.downlink_bytes,
            traffic.uplink_bytes,
            traffic.metrics_bytes
        );
        self.traffic.push(traffic);
        Ok(results)
    }

    fn finish(&mut self) -> Result<()> {
        for conn in &mut self.conns {
            write_frame(
                &mut conn.stream,
                &Frame::new(MessageType::Bye, 0, conn.id as u32, Vec::new()),
            )?;
        }
        Ok(())
    }
}

pub struct ServeOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub global: ParameterSet,
    pub traffic: Vec<RoundTraffic>,
}

/// Runs a full federation over TCP, with the server's global model seeded
/// by `fed.seed` exactly as in-process runs are.
#[allow(clippy::too_many_arguments)]
pub fn serve<F>(
    listener: &TcpListener,
    fed: &FedConfig,
    config: &ModelConfig,
    eval: &Dataset,
    train: Option<&Dataset>,
    server_pool: Option<&Dataset>,
    opts: &ServerOptions,
    on_round: F,
) -> Result<ServeOutcome>
where
    F: FnMut(&RoundMetrics) -> Result<()>,
{
    fed.validate()?;
    let (mut server, hellos) = SocketServer::accept(listener, config, fed, opts)?;
    let federation = Federation {
        fed,
        config,
        client_iterations: hellos.iter().map(|h| h.iterations).collect(),
        client_counts: hellos.iter().map(|h| h.samples).collect(),
        eval,
        train,
        server_pool,
    };
    let initial = Model::build(config, fed.seed)?.into_params();
    let result = run_federation(&federation, initial, &mut server, on_round);
    let (metrics, global) = match result {
        Ok(ok) => ok,
        Err(e) => {
            for conn in &mut server.conns {
                reject(&mut conn.stream, REJECT_OTHER, &[], &format!("server aborted: {e}"));
            }
            return Err(e);
        }
    };
    Ok(ServeOutcome {
        metrics,
        global,
        traffic: server.traffic,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClientSession {
    pub rounds_served: Vec<usize>,
}

/// Client process loop: handshake, then train on every GLOBAL_PARAMS until BYE.
/// `config` is the shared model config; the client trains at `spec.iterations`.
pub fn connect_client<A: ToSocketAddrs>(
    addr: A,
    config: &ModelConfig,
    spec: &ClientSpec,
    shard: &[usize],
    dataset: &Dataset,
    timeout: Duration,
) -> Result<ClientSession> {
    let local_config = config.with_iterations(spec.iterations);
    let mut stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    let digest = config_digest(&local_config);
    write_frame(
        &mut stream,
        &Frame::new(
            MessageType::Hello,
            0,
            spec.id as u32,
            hello_payload(&digest, spec.iterations, shard.len()),
        ),
    )?;
    let reply = read_frame(&mut stream)?;
    let seed = match reply.kind {
        MessageType::Hello if reply.payload.len() == 8 => {
            u64::from_le_bytes(reply.payload[..].try_into().expect("8 bytes"))
        }
        MessageType::Bye => return Err(rejection(&reply.payload, &digest)),
        other => return Err(Error::Protocol(format!("unexpected {other:?} during handshake"))),
    };
    let mut session = ClientSession::default();
    loop {
        let frame = read_frame(&mut stream)?;
        match frame.kind {
            MessageType::GlobalParams => {
                if frame.client as usize != spec.id {
                    return Err(Error::Protocol(format!(
                        "GLOBAL_PARAMS addressed to client {}",
                        frame.client
                    )));
                }
                let round = frame.round as usize;
                let global = deserialize_checked(&frame.payload, &local_config)?;
                let (local, loss) = client_update(&global, config, spec, shard, dataset, seed, round)?;
                let payload = serialize_params(&local, &local_config)?;
                write_frame(
                    &mut stream,
                    &Frame::new(MessageType::LocalParams, frame.round, frame.client, payload),
                )?;
                write_frame(
                    &mut stream,
                    &Frame::new(
                        MessageType::Metrics,
                        frame.round,
                        frame.client,
                        (loss as f64).to_le_bytes().to_vec(),
                    ),
                )?;
                log::info!("client {}: round {round} done, loss {loss:.5}", spec.id);
                session.rounds_served.push(round);
            }
            MessageType::Bye if frame.payload.is_empty() => return Ok(session),
            MessageType::Bye => return Err(rejection(&frame.payload, &digest)),
            other => return Err(Error::Protocol(format!("unexpected {other:?} from server"))),
        }
    }
}

fn rejection(payload: &[u8], own: &[u8; 32]) -> Error {
    match payload.split_first() {
        Some((&REJECT_DIGEST, rest)) if rest.len() >= 32 => Error::DigestMismatch {
            expected: digest_hex(rest[..32].try_into().expect("32 bytes")),
            found: digest_hex(own),
        },
        Some((_, rest)) => Error::Protocol(format!(
            "server closed the session: {}",
            String::from_utf8_lossy(rest)
        )),
        None => Error::Protocol("server closed the session".into()),
    }
}
