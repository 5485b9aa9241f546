use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol;
use super::{Embedder, EmbedderDescriptor, Embedding};
use crate::error::{Error, Result};
use crate::image::FaceImage;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Connection {
    fn open(command: &str, timeout: Duration) -> Result<(Self, String, usize)> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot start `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let mut conn = Connection {
            child,
            stdin,
            lines: rx,
        };
        let hello = conn.read_line(timeout)?;
        let (name, dim) = protocol::parse_hello(&hello)?;
        Ok((conn, name, dim))
    }

    fn read_line(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Protocol(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("endpoint closed its output".into())),
        }
    }

    fn request(&mut self, image: &FaceImage, dim: usize, timeout: Duration) -> Result<Vec<f64>> {
        let req = protocol::format_request(image.width(), image.height(), &image.luminance_u8());
        self.stdin
            .write_all(req.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Protocol(format!("write failed: {e}")))?;
        let line = self.read_line(timeout)?;
        protocol::parse_vector(&line, dim)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Embedder backed by a pool of subprocesses speaking [`protocol`].
///
/// Each connection handles one request at a time; concurrent callers are
/// spread across the pool.
pub struct ExternalEmbedder {
    name: String,
    dim: usize,
    timeout: Duration,
    pool: Vec<Mutex<Connection>>,
    next: AtomicUsize,
}

impl ExternalEmbedder {
    /// Starts `pool_size` copies of `command` (run through `sh -c`) and
    /// checks that they all advertise the same name and dimension.
    pub fn spawn(command: &str, pool_size: usize, timeout: Duration) -> Result<Self> {
        let mut pool = Vec::with_capacity(pool_size.max(1));
        let mut ident: Option<(String, usize)> = None;
        for _ in 0..pool_size.max(1) {
            let (conn, name, dim) = Connection::open(command, timeout)?;
            match &ident {
                Some((n, d)) if *n != name || *d != dim => {
                    return Err(Error::Protocol(format!(
                        "pool members disagree: `{n} {d}` vs `{name} {dim}`"
                    )))
                }
                Some(_) => {}
                None => ident = Some((name, dim)),
            }
            pool.push(Mutex::new(conn));
        }
        let (name, dim) = ident.expect("at least one connection");
        Ok(ExternalEmbedder {
            name,
            dim,
            timeout,
            pool,
            next: AtomicUsize::new(0),
        })
    }
}

impl Embedder for ExternalEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            name: self.name.clone(),
            dimension: self.dim,
            differentiable: false,
        }
    }

    fn embed(&self, image: &FaceImage) -> Result<Embedding> {
        let start = self.next.fetch_add(1, Ordering::Relaxed);
        // Prefer an idle connection; otherwise wait on the round-robin pick.
        for k in 0..self.pool.len() {
            if let Ok(mut conn) = self.pool[(start + k) % self.pool.len()].try_lock() {
                let v = conn.request(image, self.dim, self.timeout)?;
                return Embedding::from_near_unit(v);
            }
        }
        let mut conn = self.pool[start % self.pool.len()]
            .lock()
            .map_err(|_| Error::Protocol("connection poisoned".into()))?;
        let v = conn.request(image, self.dim, self.timeout)?;
        Embedding::from_near_unit(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn talks_to_a_shell_endpoint() {
        let cmd = r#"echo "HELLO fake 2"; while read h; do read p; echo "VEC 0.6 0.8"; done"#;
        let e = ExternalEmbedder::spawn(cmd, 2, Duration::from_secs(5)).unwrap();
        assert_eq!(e.descriptor().name, "fake");
        assert!(!e.descriptor().differentiable);
        let img = FaceImage::from_luminance(2, 2, &[0.0, 0.5, 1.0, 0.25]).unwrap();
        let v = e.embed(&img).unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
        assert!(matches!(e.input_gradient(&img, &[1.0, 0.0]), Err(Error::NotDifferentiable(_))));
    }

    #[test]
    fn renormalizes_slightly_off_vectors() {
        let cmd = r#"echo "HELLO fake 2"; while read h; do read p; echo "VEC 1.005 0"; done"#;
        let e = ExternalEmbedder::spawn(cmd, 1, Duration::from_secs(5)).unwrap();
        let img = FaceImage::from_luminance(1, 1, &[0.5]).unwrap();
        assert_eq!(e.embed(&img).unwrap().values(), &[1.0, 0.0]);

        let cmd = r#"echo "HELLO fake 2"; while read h; do read p; echo "VEC 1.2 0"; done"#;
        let e = ExternalEmbedder::spawn(cmd, 1, Duration::from_secs(5)).unwrap();
        assert!(e.embed(&img).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cmd = r#"echo "HELLO fake 3"; while read h; do read p; echo "VEC 0.6 0.8"; done"#;
        let e = ExternalEmbedder::spawn(cmd, 1, Duration::from_secs(5)).unwrap();
        let img = FaceImage::from_luminance(1, 1, &[0.5]).unwrap();
        assert!(matches!(e.embed(&img), Err(Error::Protocol(_))));
    }

    #[test]
    fn timeouts_and_bad_handshakes() {
        let e = ExternalEmbedder::spawn("sleep 5", 1, Duration::from_millis(200));
        assert!(matches!(e, Err(Error::Timeout(_))));
        let e = ExternalEmbedder::spawn("echo nope", 1, Duration::from_secs(5));
        assert!(matches!(e, Err(Error::Protocol(_))));

        let cmd = r#"echo "HELLO slow 2"; while read h; do read p; sleep 5; done"#;
        let e = ExternalEmbedder::spawn(cmd, 1, Duration::from_millis(200)).unwrap();
        let img = FaceImage::from_luminance(1, 1, &[0.5]).unwrap();
        assert!(matches!(e.embed(&img), Err(Error::Timeout(_))));
    }
}
