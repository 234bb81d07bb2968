//! Black-box prediction service, remote ownership verification, and the
//! forgery-attack simulators.
//!
//! The service is a small hand-rolled HTTP/1.1 server over `TcpListener`
//! (thread per connection, keep-alive). The loaded network is read-only
//! behind an `Arc`, so concurrent requests are safe and every response is a
//! pure function of the request body.

use crate::crypto::{sn_verify, CaRegistry, SerialNumber, TrapdoorParams};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng;
use crate::tensor::{argmax, Tensor};
use crate::watermark::{decode_outputs_to_sn, SnQuantizer, TriggerSet};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

/// Largest accepted batch per request.
pub const MAX_BATCH: usize = 256;
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;
const PIXELS: usize = 28 * 28;

/// One prediction: the full pre-softmax output vector plus its argmax label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub output_vector: Vec<f32>,
    pub label: usize,
    pub model_tag: String,
}

#[derive(Debug, Deserialize)]
struct PredictRequest {
    #[serde(default)]
    pixels: Option<Vec<f32>>,
    #[serde(default)]
    batch: Option<Vec<Vec<f32>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchResponse {
    results: Vec<PredictionResponse>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

// ---------------------------------------------------------------------------
// server
// ---------------------------------------------------------------------------

/// Handle to a running prediction service; dropping it (or calling `stop`)
/// shuts the listener down.
pub struct ServiceHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts the prediction service on `addr` (use port 0 for an ephemeral
/// port). Exposes `POST /predict` and `GET /health`.
pub fn serve(network: Network<f32>, model_tag: &str, addr: &str) -> Result<ServiceHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let net = Arc::new(network);
    let tag = model_tag.to_string();

    let thread = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let net = net.clone();
                    let tag = tag.clone();
                    workers.push(std::thread::spawn(move || {
                        let _ = handle_connection(stream, &net, &tag);
                    }));
                }
                Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(_) => break,
            }
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
    });

    Ok(ServiceHandle { addr: local, shutdown, thread: Some(thread) })
}

/// Loads a checkpoint and serves it; the tag defaults to the checkpoint tag.
pub fn serve_checkpoint(path: impl AsRef<std::path::Path>, addr: &str) -> Result<ServiceHandle> {
    let (network, meta) = crate::checkpoint::load(path)?;
    serve(network, &meta.tag, addr)
}

fn handle_connection(stream: TcpStream, network: &Network<f32>, tag: &str) -> Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(30)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let Some((method, path, body, keep_alive)) = read_request(&mut reader)? else {
            return Ok(());
        };
        let (status, payload) = match (method.as_str(), path.as_str()) {
            ("GET", "/health") => (200, "{\"status\":\"ok\"}".to_string()),
            ("POST", "/predict") => match predict_payload(network, tag, &body) {
                Ok(json) => (200, json),
                Err(message) => (400, serde_json::to_string(&ErrorBody { error: message })?),
            },
            _ => (404, serde_json::to_string(&ErrorBody { error: format!("no route {method} {path}") })?),
        };
        write_response(&mut writer, status, &payload, keep_alive)?;
        if !keep_alive {
            return Ok(());
        }
    }
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Result<Option<(String, String, Vec<u8>, bool)>> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut content_length = 0usize;
    let mut keep_alive = true;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 {
            return Ok(None);
        }
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((name, value)) = header.split_once(':') {
            let value = value.trim();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => {
                    content_length = value.parse().map_err(|_| Error::Http {
                        status: 400,
                        message: "bad content-length".into(),
                    })?;
                }
                "connection" => keep_alive = !value.eq_ignore_ascii_case("close"),
                _ => {}
            }
        }
    }
    if content_length > MAX_BODY_BYTES {
        return Err(Error::Http { status: 413, message: "body too large".into() });
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    Ok(Some((method, path, body, keep_alive)))
}

fn write_response(writer: &mut TcpStream, status: u16, body: &str, keep_alive: bool) -> Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        413 => "Payload Too Large",
        _ => "Error",
    };
    let connection = if keep_alive { "keep-alive" } else { "close" };
    write!(
        writer,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: {connection}\r\n\r\n{body}",
        body.len()
    )?;
    writer.flush()?;
    Ok(())
}

fn predict_one(network: &Network<f32>, tag: &str, pixels: &[f32]) -> std::result::Result<PredictionResponse, String> {
    if pixels.len() != PIXELS {
        return Err(format!("expected {PIXELS} pixel values, got {}", pixels.len()));
    }
    if !pixels.iter().all(|p| p.is_finite()) {
        return Err("pixel values must be finite".into());
    }
    let input = Tensor::new(vec![1, PIXELS], pixels.to_vec()).map_err(|e| e.to_string())?;
    let logits = network.forward_logits(&input).map_err(|e| e.to_string())?;
    let row = logits.row(0).to_vec();
    let label = argmax(&row);
    Ok(PredictionResponse { output_vector: row, label, model_tag: tag.to_string() })
}

fn predict_batch(
    network: &Network<f32>,
    tag: &str,
    batch: &[Vec<f32>],
) -> std::result::Result<Vec<PredictionResponse>, String> {
    if batch.is_empty() {
        return Err("empty batch".into());
    }
    if batch.len() > MAX_BATCH {
        return Err(format!("batch of {} exceeds the limit of {MAX_BATCH}", batch.len()));
    }
    for (i, pixels) in batch.iter().enumerate() {
        if pixels.len() != PIXELS {
            return Err(format!("image {i}: expected {PIXELS} pixel values, got {}", pixels.len()));
        }
        if !pixels.iter().all(|p| p.is_finite()) {
            return Err(format!("image {i}: pixel values must be finite"));
        }
    }
    let mut data = Vec::with_capacity(batch.len() * PIXELS);
    for pixels in batch {
        data.extend_from_slice(pixels);
    }
    let inputs = Tensor::new(vec![batch.len(), PIXELS], data).map_err(|e| e.to_string())?;
    let logits = network.forward_logits(&inputs).map_err(|e| e.to_string())?;
    Ok((0..batch.len())
        .map(|i| {
            let row = logits.row(i).to_vec();
            let label = argmax(&row);
            PredictionResponse { output_vector: row, label, model_tag: tag.to_string() }
        })
        .collect())
}

fn predict_payload(network: &Network<f32>, tag: &str, body: &[u8]) -> std::result::Result<String, String> {
    let request: PredictRequest =
        serde_json::from_slice(body).map_err(|e| format!("malformed body: {e}"))?;
    match (request.pixels, request.batch) {
        (Some(pixels), None) => {
            let response = predict_one(network, tag, &pixels)?;
            serde_json::to_string(&response).map_err(|e| e.to_string())
        }
        (None, Some(batch)) => {
            let results = predict_batch(network, tag, &batch)?;
            serde_json::to_string(&BatchResponse { results }).map_err(|e| e.to_string())
        }
        _ => Err("body must carry exactly one of \"pixels\" or \"batch\"".into()),
    }
}

// ---------------------------------------------------------------------------
// client
// ---------------------------------------------------------------------------

/// Minimal keep-alive HTTP client for the prediction endpoint.
pub struct PredictClient {
    host: String,
    stream: Option<TcpStream>,
}

impl PredictClient {
    /// `endpoint` accepts `host:port` or `http://host:port`.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let host = endpoint.trim_start_matches("http://").trim_end_matches('/').to_string();
        let mut client = Self { host, stream: None };
        client.ensure_stream()?;
        Ok(client)
    }

    fn ensure_stream(&mut self) -> Result<&mut TcpStream> {
        if self.stream.is_none() {
            let addr = self
                .host
                .to_socket_addrs()
                .map_err(|e| Error::Transport { endpoint: self.host.clone(), message: e.to_string() })?
                .next()
                .ok_or_else(|| Error::Transport {
                    endpoint: self.host.clone(),
                    message: "endpoint does not resolve".into(),
                })?;
            let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(5))
                .map_err(|e| Error::Transport { endpoint: self.host.clone(), message: e.to_string() })?;
            stream.set_read_timeout(Some(Duration::from_secs(120)))?;
            self.stream = Some(stream);
        }
        Ok(self.stream.as_mut().unwrap())
    }

    fn roundtrip(&mut self, method: &str, path: &str, body: Option<&str>) -> Result<(u16, String)> {
        let host = self.host.clone();
        let stream = self.ensure_stream()?;
        let body_bytes = body.unwrap_or("");
        let request = format!(
            "{method} {path} HTTP/1.1\r\nHost: {host}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: keep-alive\r\n\r\n{body_bytes}",
            body_bytes.len()
        );
        let io_err = |e: std::io::Error| Error::Transport { endpoint: host.clone(), message: e.to_string() };
        stream.write_all(request.as_bytes()).map_err(io_err)?;
        stream.flush().map_err(io_err)?;

        let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
        let mut status_line = String::new();
        reader.read_line(&mut status_line).map_err(io_err)?;
        let status: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Transport {
                endpoint: host.clone(),
                message: format!("bad status line {status_line:?}"),
            })?;
        let mut content_length = 0usize;
        loop {
            let mut header = String::new();
            reader.read_line(&mut header).map_err(io_err)?;
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body).map_err(io_err)?;
        Ok((status, String::from_utf8_lossy(&body).into_owned()))
    }

    pub fn health(&mut self) -> Result<bool> {
        let (status, _) = self.roundtrip("GET", "/health", None)?;
        Ok(status == 200)
    }

    /// Predicts a single image.
    pub fn predict(&mut self, pixels: &[f32]) -> Result<PredictionResponse> {
        let body = serde_json::to_string(&serde_json::json!({ "pixels": pixels }))?;
        let (status, text) = self.roundtrip("POST", "/predict", Some(&body))?;
        if status != 200 {
            return Err(Error::Http { status, message: text });
        }
        Ok(serde_json::from_str(&text)?)
    }

    /// Predicts up to `MAX_BATCH` images in one request.
    pub fn predict_batch(&mut self, batch: &[Vec<f32>]) -> Result<Vec<PredictionResponse>> {
        let body = serde_json::to_string(&serde_json::json!({ "batch": batch }))?;
        let (status, text) = self.roundtrip("POST", "/predict", Some(&body))?;
        if status != 200 {
            return Err(Error::Http { status, message: text });
        }
        let parsed: BatchResponse = serde_json::from_str(&text)?;
        Ok(parsed.results)
    }
}

// ---------------------------------------------------------------------------
// remote verification
// ---------------------------------------------------------------------------

/// Outcome of a remote ownership check. The verdict is the conjunction of
/// the digit match against the claimed serial and the registry check.
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub endpoint: String,
    pub sn_extracted: String,
    pub sn_match: bool,
    pub ca_check: bool,
    pub verdict: bool,
    pub digit_matches: usize,
    pub digit_total: usize,
}

/// Queries each trigger through the endpoint, decodes the serial from the
/// concatenated output vectors, compares against the claimed serial and asks
/// the registry to verify. Transport failures surface as errors, never as a
/// false verdict.
pub fn verify_remote(
    endpoint: &str,
    triggers: &TriggerSet,
    claimed: &SerialNumber,
    quantizer: SnQuantizer,
    params: &TrapdoorParams,
    registry: &CaRegistry,
) -> Result<VerificationReport> {
    let mut client = PredictClient::connect(endpoint)?;
    let batch: Vec<Vec<f32>> = (0..triggers.count()).map(|i| triggers.images.row(i).to_vec()).collect();
    let responses = client.predict_batch(&batch)?;
    let mut outputs = Tensor::zeros(vec![responses.len(), 10]);
    for (i, r) in responses.iter().enumerate() {
        if r.output_vector.len() != 10 {
            return Err(Error::Http {
                status: 200,
                message: format!("endpoint returned {} outputs per image", r.output_vector.len()),
            });
        }
        outputs.data_mut()[i * 10..(i + 1) * 10].copy_from_slice(&r.output_vector);
    }
    let extracted = decode_outputs_to_sn(&outputs, quantizer);
    let sn_match = &extracted == claimed;
    let ca_check = sn_verify(&extracted, params, registry)?;
    Ok(VerificationReport {
        endpoint: endpoint.to_string(),
        sn_extracted: extracted.to_string(),
        sn_match,
        ca_check,
        verdict: sn_match && ca_check,
        digit_matches: extracted.matching_digits(claimed),
        digit_total: claimed.len(),
    })
}

// ---------------------------------------------------------------------------
// attack simulators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackStrategy {
    LabelForgery,
    SnForgery,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackStats {
    pub strategy: AttackStrategy,
    pub queries_used: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

fn random_images(count: usize, rng: &mut rand_chacha::ChaCha20Rng) -> Vec<Vec<f32>> {
    (0..count)
        .map(|_| (0..PIXELS).map(|_| rng.gen_range(0.0..1.0f32)).collect())
        .collect()
}

/// Label-watermark forgery: any queried (image, predicted label) pair is a
/// claimable watermark, so every trial succeeds by construction. This is the
/// vulnerability baseline the serial-number scheme removes.
pub fn attack_forge_label(endpoint: &str, trials: usize, seed: u64) -> Result<AttackStats> {
    let mut client = PredictClient::connect(endpoint)?;
    let mut rng = rng::stream(seed, "label-forgery");
    let mut successes = 0usize;
    let mut queries = 0usize;
    let mut done = 0usize;
    while done < trials {
        let m = MAX_BATCH.min(trials - done);
        let images = random_images(m, &mut rng);
        let responses = client.predict_batch(&images)?;
        queries += m;
        // every response yields a (input, label) pair the attacker can claim
        successes += responses.iter().filter(|r| r.label < 10).count();
        done += m;
    }
    Ok(AttackStats {
        strategy: AttackStrategy::LabelForgery,
        queries_used: queries,
        trials,
        successes,
        success_rate: successes as f64 / trials.max(1) as f64,
    })
}

/// Serial forgery: the attacker queries random probe images, then assembles
/// candidate trigger tuples from the probe pool (reusing responses, which is
/// strictly cheaper than fresh queries per trial), decodes a candidate
/// serial from each tuple and submits it for verification.
pub fn attack_forge_sn(
    endpoint: &str,
    registry: &CaRegistry,
    params: &TrapdoorParams,
    quantizer: SnQuantizer,
    trigger_count: usize,
    trials: usize,
    seed: u64,
) -> Result<AttackStats> {
    let mut client = PredictClient::connect(endpoint)?;
    let mut rng = rng::stream(seed, "sn-forgery");
    let pool_size = (trigger_count * trials).min(4096).max(trigger_count);
    let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(pool_size);
    let mut queried = 0usize;
    while queried < pool_size {
        let m = MAX_BATCH.min(pool_size - queried);
        let images = random_images(m, &mut rng);
        for r in client.predict_batch(&images)? {
            outputs.push(r.output_vector);
        }
        queried += m;
    }

    let mut successes = 0usize;
    let mut flat = Tensor::zeros(vec![trigger_count, 10]);
    for _ in 0..trials {
        for slot in 0..trigger_count {
            let pick = rng.gen_range(0..outputs.len());
            flat.data_mut()[slot * 10..(slot + 1) * 10].copy_from_slice(&outputs[pick]);
        }
        let candidate = decode_outputs_to_sn(&flat, quantizer);
        if sn_verify(&candidate, params, registry)? {
            successes += 1;
        }
    }
    Ok(AttackStats {
        strategy: AttackStrategy::SnForgery,
        queries_used: queried,
        trials,
        successes,
        success_rate: successes as f64 / trials.max(1) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{build_scaled, ArchitectureId};

    fn spawn_tiny_service() -> ServiceHandle {
        let net: Network<f32> = build_scaled(ArchitectureId::Teacher, 8, 99);
        serve(net, "tiny", "127.0.0.1:0").unwrap()
    }

    #[test]
    fn health_and_predict_are_deterministic() {
        let service = spawn_tiny_service();
        let mut client = PredictClient::connect(&service.endpoint()).unwrap();
        assert!(client.health().unwrap());

        let zero = vec![0.0f32; 784];
        let a = client.predict(&zero).unwrap();
        let b = client.predict(&zero).unwrap();
        assert_eq!(a.output_vector, b.output_vector);
        assert_eq!(a.label, b.label);
        assert_eq!(a.model_tag, "tiny");
        assert_eq!(a.label, argmax(&a.output_vector));
        service.stop();
    }

    #[test]
    fn validation_errors() {
        let service = spawn_tiny_service();
        let mut client = PredictClient::connect(&service.endpoint()).unwrap();

        // 783 pixels
        let short = vec![0.0f32; 783];
        match client.predict(&short) {
            Err(Error::Http { status: 400, message }) => assert!(message.contains("783")),
            other => panic!("expected 400, got {other:?}"),
        }

        // malformed body
        let (status, text) = client.roundtrip("POST", "/predict", Some("{oops")).unwrap();
        assert_eq!(status, 400);
        assert!(text.contains("malformed"));

        // oversize batch
        let batch = vec![vec![0.0f32; 784]; MAX_BATCH + 1];
        match client.predict_batch(&batch) {
            Err(Error::Http { status: 400, message }) => assert!(message.contains("exceeds")),
            other => panic!("expected 400, got {other:?}"),
        }

        // unknown route
        let (status, _) = client.roundtrip("GET", "/nope", None).unwrap();
        assert_eq!(status, 404);
        service.stop();
    }

    #[test]
    fn concurrent_requests_agree() {
        let service = spawn_tiny_service();
        let endpoint = service.endpoint();
        let mut reference = PredictClient::connect(&endpoint).unwrap();
        let image: Vec<f32> = (0..784).map(|i| (i % 31) as f32 / 31.0).collect();
        let want = reference.predict(&image).unwrap().output_vector;

        let handles: Vec<_> = (0..4)
            .map(|_| {
                let endpoint = endpoint.clone();
                let image = image.clone();
                let want = want.clone();
                std::thread::spawn(move || {
                    let mut client = PredictClient::connect(&endpoint).unwrap();
                    for _ in 0..20 {
                        assert_eq!(client.predict(&image).unwrap().output_vector, want);
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        service.stop();
    }

    #[test]
    fn label_forgery_always_succeeds() {
        let service = spawn_tiny_service();
        let stats = attack_forge_label(&service.endpoint(), 100, 7).unwrap();
        assert_eq!(stats.trials, 100);
        assert_eq!(stats.successes, 100);
        assert_eq!(stats.success_rate, 1.0);
        service.stop();
    }

    #[test]
    fn sn_forgery_finds_nothing_against_tiny_net() {
        let dir = tempfile::tempdir().unwrap();
        let params = crate::crypto::keygen(64, 3).unwrap();
        let registry = CaRegistry::open(dir.path().join("r.jsonl")).unwrap();
        let service = spawn_tiny_service();
        let stats = attack_forge_sn(
            &service.endpoint(),
            &registry,
            &params,
            SnQuantizer::default(),
            4,
            1000,
            11,
        )
        .unwrap();
        assert_eq!(stats.successes, 0);
        assert!(stats.queries_used <= 4000);
        service.stop();
    }
}
