//! HTTP front: `POST /gw/<route>` data path and `POST /mgmt/<verb>`
//! management API, serving one shared middleware deployment.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use govgw_core::gateway::{ForwardResponse, Forwarder, Message};
use govgw_core::manager::Middleware;
use serde_json::{json, Value};
use tiny_http::{Header, Response, Server};

use crate::ops::{self, OpClass};
use crate::providers::{Delivery, MockProviders, Verdict};

/// Thread-safe forwarder: `mock:*` targets hit the in-process providers,
/// `http(s)://` targets go over the wire.
#[derive(Default)]
pub struct HttpForwarder {
    deliveries: Mutex<Vec<Delivery>>,
}

impl HttpForwarder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deliveries_to(&self, target: &str) -> Vec<Delivery> {
        self.deliveries
            .lock()
            .expect("forwarder lock")
            .iter()
            .filter(|d| d.target == target)
            .cloned()
            .collect()
    }
}

impl Forwarder for HttpForwarder {
    fn forward(&self, target: &str, message: &Message) -> Result<ForwardResponse, String> {
        if let Some(verdict) = MockProviders::check(target, message) {
            self.deliveries.lock().expect("forwarder lock").push(Delivery {
                target: target.to_string(),
                message: message.clone(),
                verdict: verdict.clone(),
            });
            return Ok(match verdict {
                Verdict::Accept => ForwardResponse {
                    status: 200,
                    body: "accepted".into(),
                },
                Verdict::Reject(reason) => ForwardResponse {
                    status: 401,
                    body: format!("rejected: {reason}"),
                },
            });
        }
        if target.starts_with("http://") || target.starts_with("https://") {
            let mut request = ureq::post(target);
            for (name, value) in &message.headers {
                request = request.set(name, value);
            }
            return match request.send_string(&message.body) {
                Ok(response) => Ok(ForwardResponse {
                    status: response.status(),
                    body: response.into_string().unwrap_or_default(),
                }),
                Err(ureq::Error::Status(status, response)) => Ok(ForwardResponse {
                    status,
                    body: response.into_string().unwrap_or_default(),
                }),
                Err(e) => Err(e.to_string()),
            };
        }
        Err(format!("unreachable forward target `{target}`"))
    }
}

pub struct ServerHandle {
    pub port: u16,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    pub middleware: Arc<Mutex<Middleware>>,
    pub forwarder: Arc<HttpForwarder>,
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Start the server on an OS-assigned loopback port.
pub fn start(middleware: Middleware) -> std::io::Result<ServerHandle> {
    let server = Server::http("127.0.0.1:0")
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::AddrInUse, e.to_string()))?;
    let port = server.server_addr().to_ip().expect("tcp listener").port();
    let middleware = Arc::new(Mutex::new(middleware));
    let forwarder = Arc::new(HttpForwarder::new());
    let shutdown = Arc::new(AtomicBool::new(false));

    let thread = {
        let middleware = Arc::clone(&middleware);
        let forwarder = Arc::clone(&forwarder);
        let shutdown = Arc::clone(&shutdown);
        std::thread::spawn(move || {
            while !shutdown.load(Ordering::SeqCst) {
                let request = match server.recv_timeout(Duration::from_millis(50)) {
                    Ok(Some(r)) => r,
                    Ok(None) => continue,
                    Err(_) => break,
                };
                handle(request, &middleware, forwarder.as_ref());
            }
        })
    };

    Ok(ServerHandle {
        port,
        shutdown,
        thread: Some(thread),
        middleware,
        forwarder,
    })
}

fn handle(mut request: tiny_http::Request, middleware: &Mutex<Middleware>, forwarder: &HttpForwarder) {
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        respond_json(request, 400, &json!({"error": "bad-request", "detail": "unreadable body"}));
        return;
    }
    if request.method() != &tiny_http::Method::Post {
        respond_json(
            request,
            405,
            &json!({"error": "method-not-allowed", "detail": "POST only"}),
        );
        return;
    }
    let url = request.url().to_string();
    if let Some(route) = url.strip_prefix("/gw/") {
        let mut message = Message::new(body);
        for header in request.headers() {
            message
                .headers
                .insert(header.field.to_string(), header.value.to_string());
        }
        let response = {
            let mut mw = middleware.lock().expect("middleware lock");
            let instances = std::mem::take(&mut mw.instances);
            let response = mw.gateway.process(route.trim_end_matches('/'), message, &instances, forwarder);
            mw.instances = instances;
            response
        };
        let mut http = Response::from_string(response.body).with_status_code(response.status);
        if let Ok(header) =
            Header::from_bytes("X-Message-Id", response.message_id.to_string())
        {
            http.add_header(header);
        }
        let _ = request.respond(http);
        return;
    }
    if let Some(verb) = url.strip_prefix("/mgmt/") {
        let args: Value = if body.trim().is_empty() {
            json!({})
        } else {
            match serde_json::from_str(&body) {
                Ok(v) => v,
                Err(e) => {
                    respond_json(
                        request,
                        400,
                        &json!({"error": "bad-arguments", "detail": format!("body: {e}")}),
                    );
                    return;
                }
            }
        };
        let result = {
            let mut mw = middleware.lock().expect("middleware lock");
            ops::apply(&mut mw, forwarder, verb.trim_end_matches('/'), &args)
        };
        match result {
            Ok(value) => respond_json(request, 200, &value),
            Err(e) => {
                let status = match e.class {
                    OpClass::Validation => 400,
                    OpClass::Operational => 500,
                };
                respond_json(request, status, &e.to_json());
            }
        }
        return;
    }
    respond_json(request, 404, &json!({"error": "not-found", "detail": url}));
}

fn respond_json(request: tiny_http::Request, status: u16, value: &Value) {
    let mut response = Response::from_string(value.to_string()).with_status_code(status);
    if let Ok(header) = Header::from_bytes("Content-Type", "application/json") {
        response.add_header(header);
    }
    let _ = request.respond(response);
}
