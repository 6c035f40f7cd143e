use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::frame::*;
use crate::blockstore::BlockStore;
use crate::StoreError;

type Shared = Arc<Mutex<Box<dyn BlockStore>>>;

/// A running server; dropping the handle leaves it running.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes open connections and waits for the accept loop to end.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        for c in self.conns.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves `store` on a background thread, one thread per connection.
pub fn spawn(addr: impl ToSocketAddrs, store: Box<dyn BlockStore>) -> Result<ServerHandle, StoreError> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let shared: Shared = Arc::new(Mutex::new(store));
    let conns = Arc::new(Mutex::new(Vec::new()));
    let (flag, open) = (stop.clone(), conns.clone());
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(conn) = conn else { continue };
            if let Ok(c) = conn.try_clone() {
                open.lock().unwrap_or_else(|e| e.into_inner()).push(c);
            }
            let store = shared.clone();
            thread::spawn(move || {
                let _ = serve_connection(conn, store);
            });
        }
    });
    Ok(ServerHandle { addr, stop, conns, thread: Some(thread) })
}

fn serve_connection(conn: TcpStream, store: Shared) -> std::io::Result<()> {
    conn.set_nodelay(true)?;
    let mut reader = BufReader::new(conn.try_clone()?);
    let mut writer = BufWriter::new(conn);
    while let Some(req) = Frame::read_from(&mut reader)? {
        let reply = {
            let mut guard = store.lock().unwrap_or_else(|e| e.into_inner());
            dispatch(&mut **guard, &req)
        };
        let frame = match reply {
            Ok(body) => Frame::new(REPLY | req.op, body),
            Err(e) => Frame::error(&e),
        };
        frame.write_to(&mut writer)?;
    }
    Ok(())
}

/// Executes one request frame against `store`.
pub fn dispatch(store: &mut dyn BlockStore, req: &Frame) -> Result<Vec<u8>, StoreError> {
    match req.op {
        SETUP => {
            let (version, layout) = decode_setup(&req.body)?;
            if version != VERSION {
                return Err(StoreError::Version { client: version, server: VERSION });
            }
            store.setup(&layout)?;
            Ok(Vec::new())
        }
        FETCH_BLOCKS => Ok(encode_blocks(&store.fetch_blocks(&decode_requests(&req.body)?)?)),
        STORE_LEVEL => {
            store.store_level(decode_upload(&req.body)?)?;
            Ok(Vec::new())
        }
        FETCH_META => {
            let meta = store.fetch_meta(decode_level(&req.body)?)?;
            let mut w = Writer::default();
            w.bytes(&meta);
            Ok(w.0)
        }
        MARK_UNFILLED => {
            store.mark_unfilled(decode_level(&req.body)?)?;
            Ok(Vec::new())
        }
        STATS => {
            Reader::new(&req.body).finish()?;
            Ok(encode_stats(&store.stats()?))
        }
        op => Err(StoreError::Malformed(format!("unknown opcode {op:#04x}"))),
    }
}
