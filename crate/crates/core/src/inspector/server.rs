use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::os::unix::fs::FileTypeExt;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use super::eve::emit_eve;
use super::pipeline::{inspect_pcap, Inspection, InspectorState};
use super::rules::write_rules;
use super::schedule::schedule;
use super::{io_err, InspectError, InspectorConfig};
use crate::trafficmodel::FlowClassifier;

const POLL: Duration = Duration::from_millis(20);

fn now_us() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as i64)
}

/// Shared daemon context. The state mutex is the single writer for the
/// rule file, EVE log and blacklist.
pub struct Daemon {
    pub config: InspectorConfig,
    pub model: Box<dyn FlowClassifier>,
    pub state: Mutex<InspectorState>,
}

impl Daemon {
    pub fn new(
        config: InspectorConfig,
        model: Box<dyn FlowClassifier>,
        state: InspectorState,
    ) -> Self {
        Daemon {
            config,
            model,
            state: Mutex::new(state),
        }
    }

    /// Inspects one pcap and persists the outcome: the full rule book is
    /// rewritten when rules changed and alerts go to the EVE log if set.
    pub fn inspect(&self, pcap: &Path) -> Result<Inspection, InspectError> {
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let result = inspect_pcap(
            pcap,
            self.model.as_ref(),
            &self.config,
            &mut state,
            now_us(),
        )?;
        if !result.rules.is_empty() {
            write_rules(state.rules.rules(), &self.config.rules_dir)?;
        }
        if let (Some(log), false) = (&self.config.eve_log, result.alerts.is_empty()) {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(log)
                .map_err(|e| io_err(log.display(), e))?;
            emit_eve(&result.alerts, file).map_err(|e| io_err(log.display(), e))?;
        }
        Ok(result)
    }
}

/// Answers one request line.
///
/// `{"op":"inspect","pcap_path":P}` gives `{"alerts","rules","stats"}`,
/// `{"op":"ping"}` gives `{"ok":true}` and `{"op":"blacklist"}` the active
/// entries. Failures come back as `{"error": ...}`.
pub fn handle_request(daemon: &Daemon, line: &str) -> Value {
    let Ok(req) = serde_json::from_str::<Value>(line) else {
        return json!({"error": "parse"});
    };
    match req.get("op").and_then(Value::as_str) {
        Some("ping") => json!({"ok": true}),
        Some("blacklist") => {
            let state = daemon.state.lock().unwrap_or_else(|p| p.into_inner());
            json!({"blacklist": state.blacklist.active(now_us())})
        }
        Some("inspect") => {
            if !daemon.config.deep_inspecting {
                return json!({"error": "deep inspection is disabled"});
            }
            let Some(path) = req.get("pcap_path").and_then(Value::as_str) else {
                return json!({"error": "inspect needs a string pcap_path"});
            };
            match daemon.inspect(Path::new(path)) {
                Ok(r) => {
                    serde_json::to_value(r).unwrap_or_else(|e| json!({"error": e.to_string()}))
                }
                Err(e) => json!({"error": e.to_string()}),
            }
        }
        Some(op) => json!({"error": format!("unknown op {op:?}")}),
        None => json!({"error": "missing op"}),
    }
}

fn serve_connection(daemon: &Daemon, stream: UnixStream) -> std::io::Result<()> {
    let mut out = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_request(daemon, &line);
        out.write_all(reply.to_string().as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
    }
    Ok(())
}

/// Inspects every `*.pcap` in `dir` in name order, renaming each to
/// `*.pcap.done` afterwards.
pub fn spool_once(daemon: &Daemon, dir: &Path) -> Result<Vec<(PathBuf, Inspection)>, InspectError> {
    let mut pcaps: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir.display(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pcap"))
        .collect();
    pcaps.sort();
    let mut out = Vec::new();
    for p in pcaps {
        let r = daemon.inspect(&p)?;
        let mut done = p.clone().into_os_string();
        done.push(".done");
        std::fs::rename(&p, &done).map_err(|e| io_err(p.display(), e))?;
        out.push((p, r));
    }
    Ok(out)
}

fn wait_until(deadline_ms: u64, start: std::time::Instant, stop: &AtomicBool) -> bool {
    while (start.elapsed().as_millis() as u64) < deadline_ms {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        thread::sleep(POLL);
    }
    !stop.load(Ordering::SeqCst)
}

pub struct Server {
    listener: UnixListener,
    path: PathBuf,
}

impl Server {
    pub fn bind(path: &Path) -> Result<Server, InspectError> {
        if path.exists() {
            // A socket nobody answers on is left over from a killed daemon.
            let stale = std::fs::metadata(path).is_ok_and(|m| m.file_type().is_socket())
                && UnixStream::connect(path).is_err();
            if !stale {
                return Err(InspectError::Io(format!(
                    "socket path {} is already in use",
                    path.display()
                )));
            }
            std::fs::remove_file(path).map_err(|e| io_err(path.display(), e))?;
        }
        let listener = UnixListener::bind(path).map_err(|e| io_err(path.display(), e))?;
        Ok(Server {
            listener,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Serves until `stop` is set. Each connection gets its own thread and
    /// its requests are answered in order. With deep inspection on and a
    /// spool directory configured, the spool is drained at the end of every
    /// sampling window.
    pub fn run(self, daemon: Arc<Daemon>, stop: Arc<AtomicBool>) -> Result<(), InspectError> {
        self.listener
            .set_nonblocking(true)
            .map_err(|e| io_err(self.path.display(), e))?;
        let scheduler = match (&daemon.config.spool_dir, daemon.config.deep_inspecting) {
            (Some(dir), true) => {
                let (daemon, stop, dir) = (daemon.clone(), stop.clone(), dir.clone());
                Some(thread::spawn(move || {
                    let start = std::time::Instant::now();
                    for w in schedule(&daemon.config, 0, daemon.config.seed) {
                        if !wait_until(w.start_ms + w.duration_ms, start, &stop) {
                            break;
                        }
                        if let Err(e) = spool_once(&daemon, &dir) {
                            log::warn!("spool: {e}");
                        }
                    }
                }))
            }
            _ => None,
        };
        while !stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    let daemon = daemon.clone();
                    let _ = stream.set_nonblocking(false);
                    thread::spawn(move || {
                        if let Err(e) = serve_connection(&daemon, stream) {
                            log::debug!("connection closed: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) => log::warn!("accept: {e}"),
            }
        }
        if let Some(h) = scheduler {
            let _ = h.join();
        }
        let _ = std::fs::remove_file(&self.path);
        Ok(())
    }
}
