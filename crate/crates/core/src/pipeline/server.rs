//! TCP server answering ensemble predictions, and the matching client.

use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::wire::{read_frame, write_json, Request, Response};
use super::EnsembleEndpoint;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::fusion::{Ensemble, FusedPrediction};

/// A running server. Dropping the handle stops accepting new connections.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(acceptor) = self.acceptor.take() {
            let _ = acceptor.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(acceptor) = self.acceptor.take() {
            // wake the blocking accept()
            let _ = TcpStream::connect(self.addr);
            let _ = acceptor.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

/// Binds `endpoint` and serves predictions on a thread per connection.
pub fn serve_ensemble(ensemble: Arc<Ensemble>, endpoint: &str) -> Result<ServerHandle> {
    let listener = TcpListener::bind(endpoint)
        .map_err(|source| Error::BindFailure { endpoint: endpoint.to_string(), source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| Error::BindFailure { endpoint: endpoint.to_string(), source })?;
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let ensemble = Arc::clone(&ensemble);
                thread::spawn(move || {
                    let _ = handle_connection(&ensemble, stream);
                });
            }
        })
    };
    Ok(ServerHandle { addr, stop, acceptor: Some(acceptor) })
}

/// Best-effort id recovery from a payload that failed to parse as a request.
fn salvage_id(payload: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(payload)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
        .unwrap_or_default()
}

pub(crate) fn answer(ensemble: &Ensemble, payload: &[u8]) -> Response {
    match serde_json::from_slice::<Request>(payload) {
        Ok(Request::Predict { id, features }) => {
            let sample = Sample::new(id.clone(), features, None);
            match ensemble.predict(&sample) {
                Ok(FusedPrediction { scores, class }) => Response::Prediction { id, probs: scores, class },
                Err(e) => Response::Error { id, error: e.to_string() },
            }
        }
        Err(e) => Response::Error { id: salvage_id(payload), error: format!("bad request: {e}") },
    }
}

fn handle_connection(ensemble: &Ensemble, stream: TcpStream) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(payload) = read_frame(&mut reader)? {
        write_json(&mut writer, &answer(ensemble, &payload))?;
        // flush once the client has no further pipelined requests buffered
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
    writer.flush()
}

/// Client side of the wire protocol.
#[derive(Debug)]
pub struct RemoteEnsemble {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

fn transport(e: impl std::fmt::Display) -> Error {
    Error::TransportFailure(e.to_string())
}

impl RemoteEnsemble {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let reader = BufReader::new(stream.try_clone().map_err(transport)?);
        Ok(RemoteEnsemble { reader, writer: BufWriter::new(stream) })
    }

    /// Sends a raw frame and returns the decoded response.
    pub fn raw_call(&mut self, payload: &[u8]) -> Result<Response> {
        super::wire::write_frame(&mut self.writer, payload).map_err(transport)?;
        self.writer.flush().map_err(transport)?;
        self.read_response()
    }

    fn read_response(&mut self) -> Result<Response> {
        let payload = read_frame(&mut self.reader)
            .map_err(transport)?
            .ok_or_else(|| transport("server closed the connection"))?;
        serde_json::from_slice(&payload).map_err(|e| transport(format!("bad response: {e}")))
    }

    pub fn call(&mut self, sample: &Sample) -> Result<Response> {
        let req = Request::Predict { id: sample.id.clone(), features: sample.features.clone() };
        write_json(&mut self.writer, &req).map_err(transport)?;
        self.writer.flush().map_err(transport)?;
        self.read_response()
    }

    /// Writes every request before reading responses; returns responses in
    /// arrival order.
    pub fn call_pipelined(&mut self, samples: &[Sample]) -> Result<Vec<Response>> {
        let stream = self.writer.get_ref().try_clone().map_err(transport)?;
        let requests: Vec<Request> = samples
            .iter()
            .map(|s| Request::Predict { id: s.id.clone(), features: s.features.clone() })
            .collect();
        let sender = thread::spawn(move || -> std::io::Result<()> {
            let mut w = BufWriter::new(stream);
            for req in &requests {
                write_json(&mut w, req)?;
            }
            w.flush()
        });
        let responses = (0..samples.len()).map(|_| self.read_response()).collect::<Result<Vec<_>>>();
        sender.join().map_err(|_| transport("sender thread panicked"))?.map_err(transport)?;
        responses
    }
}

impl EnsembleEndpoint for RemoteEnsemble {
    fn predict(&mut self, sample: &Sample) -> Result<FusedPrediction> {
        match self.call(sample)? {
            Response::Prediction { id, probs, class } if id == sample.id => Ok(FusedPrediction { scores: probs, class }),
            Response::Prediction { id, .. } => Err(transport(format!("response for `{id}`, expected `{}`", sample.id))),
            Response::Error { error, .. } => Err(Error::TransportFailure(format!("server error: {error}"))),
        }
    }
}
