//! Site file server: serves the site's `base_dir` over the line protocol.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use tokio::io::{AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

use crate::fabric::Site;
use crate::staging::transfer::write_local_atomic;
use crate::wire::{read_line, write_line, ErrorCode, WireError, MAX_BODY};

/// Maps an absolute protocol path onto `root`, refusing to leave it.
pub fn resolve(root: &Path, path: &str) -> Result<PathBuf, WireError> {
    let bad = || WireError::new(ErrorCode::BadRequest, format!("bad path {path:?}"));
    if !path.starts_with('/') {
        return Err(bad());
    }
    let mut out = root.to_path_buf();
    for comp in Path::new(path).components() {
        match comp {
            Component::RootDir | Component::CurDir => {}
            Component::Normal(part) => out.push(part),
            Component::ParentDir | Component::Prefix(_) => return Err(bad()),
        }
    }
    Ok(out)
}

fn io_err(e: std::io::Error) -> WireError {
    match e.kind() {
        std::io::ErrorKind::NotFound => WireError::new(ErrorCode::NotFound, "no such file"),
        _ => WireError::new(ErrorCode::Io, e.to_string()),
    }
}

pub async fn serve_connection(site: Arc<Site>, stream: TcpStream) {
    let _ = stream.set_nodelay(true);
    let mut stream = BufReader::new(stream);
    while let Ok(Some(line)) = read_line(&mut stream).await {
        let mut parts = line.split_whitespace();
        let verb = parts.next().unwrap_or("");
        let path = parts.next();
        let reply: Result<Option<Vec<u8>>, WireError> = match (verb, path) {
            ("PING", _) => {
                let _ = write_line(stream.get_mut(), &format!("PONG {}", site.site_id())).await;
                continue;
            }
            ("GET", Some(p)) => match resolve(site.base_dir(), p) {
                Ok(local) => tokio::fs::read(&local).await.map(Some).map_err(io_err),
                Err(e) => Err(e),
            },
            ("PUT", Some(p)) => {
                let len = match parts.next().and_then(|l| l.parse::<u64>().ok()) {
                    Some(len) if len <= MAX_BODY => len,
                    _ => {
                        let _ = write_line(stream.get_mut(), "ERR BAD_REQUEST PUT needs a length")
                            .await;
                        return;
                    }
                };
                let mut body = vec![0u8; len as usize];
                if stream.read_exact(&mut body).await.is_err() {
                    return;
                }
                site.count_put();
                match resolve(site.base_dir(), p) {
                    Ok(local) => write_local_atomic(&local, &body)
                        .await
                        .map(|_| None)
                        .map_err(io_err),
                    Err(e) => Err(e),
                }
            }
            ("DEL", Some(p)) => match resolve(site.base_dir(), p) {
                Ok(local) if local == site.base_dir() => Err(WireError::new(
                    ErrorCode::BadRequest,
                    "refusing to delete the root",
                )),
                Ok(local) => {
                    let res = match tokio::fs::metadata(&local).await {
                        Ok(m) if m.is_dir() => tokio::fs::remove_dir_all(&local).await,
                        Ok(_) => tokio::fs::remove_file(&local).await,
                        Err(e) => Err(e),
                    };
                    res.map(|_| None).map_err(io_err)
                }
                Err(e) => Err(e),
            },
            _ => Err(WireError::new(
                ErrorCode::BadRequest,
                format!("bad request {line:?}"),
            )),
        };
        let sent = match reply {
            Ok(None) => write_line(stream.get_mut(), "OK").await,
            Ok(Some(body)) => {
                let mut out = format!("OK {}\n", body.len()).into_bytes();
                out.extend_from_slice(&body);
                let w = stream.get_mut();
                match w.write_all(&out).await {
                    Ok(()) => w.flush().await,
                    Err(e) => Err(e),
                }
            }
            Err(e) => write_line(stream.get_mut(), &format!("ERR {e}")).await,
        };
        if sent.is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_stays_under_root() {
        let root = Path::new("/srv/site");
        assert_eq!(
            resolve(root, "/a/b.txt").unwrap(),
            PathBuf::from("/srv/site/a/b.txt")
        );
        assert_eq!(resolve(root, "/./a").unwrap(), PathBuf::from("/srv/site/a"));
        assert!(resolve(root, "/../etc/passwd").is_err());
        assert!(resolve(root, "a").is_err());
    }
}
