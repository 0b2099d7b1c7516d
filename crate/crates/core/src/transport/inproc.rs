use std::collections::HashMap;
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{Frame, Role, Transport, TransportError};

/// One role's end of a fully connected in-process mesh. Frames travel as
/// encoded bytes.
#[derive(Debug)]
pub struct InProcTransport {
    role: Role,
    tx: HashMap<Role, Sender<Vec<u8>>>,
    rx: HashMap<Role, Receiver<Vec<u8>>>,
    timeout: Duration,
}

/// Builds connected transports for every role, in [`Role::ALL`] order.
pub fn inproc_mesh(timeout: Duration) -> Vec<InProcTransport> {
    let mut ends: Vec<InProcTransport> = Role::ALL
        .iter()
        .map(|&role| InProcTransport {
            role,
            tx: HashMap::new(),
            rx: HashMap::new(),
            timeout,
        })
        .collect();
    for from in Role::ALL {
        for to in Role::ALL {
            if from != to {
                let (tx, rx) = channel();
                ends[from.index()].tx.insert(to, tx);
                ends[to.index()].rx.insert(from, rx);
            }
        }
    }
    ends
}

impl Transport for InProcTransport {
    fn role(&self) -> Role {
        self.role
    }

    fn send(&mut self, to: Role, frame: &Frame) -> Result<(), TransportError> {
        let tx = self.tx.get(&to).ok_or(TransportError::NoRoute(to))?;
        tx.send(frame.encode()?).map_err(|_| TransportError::PeerClosed(to))
    }

    fn recv(&mut self, from: Role) -> Result<Frame, TransportError> {
        let rx = self.rx.get(&from).ok_or(TransportError::NoRoute(from))?;
        let bytes = rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout(from),
            RecvTimeoutError::Disconnected => TransportError::PeerClosed(from),
        })?;
        Ok(Frame::decode(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MsgType;

    #[test]
    fn per_pair_fifo() {
        let mut mesh = inproc_mesh(Duration::from_secs(1));
        let mut b = mesh.pop().unwrap();
        let mut a = mesh.pop().unwrap();
        let mut s = mesh.pop().unwrap();
        for i in 0..10 {
            a.send(Role::ClientB, &Frame::new(1, i, MsgType::ShareTransfer, vec![i as u8])).unwrap();
            s.send(Role::ClientB, &Frame::new(1, 100 + i, MsgType::InputGradDown, vec![])).unwrap();
        }
        for i in 0..10 {
            assert_eq!(b.recv(Role::Server).unwrap().step, 100 + i);
        }
        for i in 0..10 {
            assert_eq!(b.recv(Role::ClientA).unwrap().payload, vec![i as u8]);
        }
        assert_eq!(a.role(), Role::ClientA);
    }

    #[test]
    fn timeout_and_closed_peer() {
        let mut mesh = inproc_mesh(Duration::from_millis(20));
        let b = mesh.pop().unwrap();
        let mut a = mesh.pop().unwrap();
        assert_eq!(a.recv(Role::Server), Err(TransportError::Timeout(Role::Server)));
        drop(b);
        assert_eq!(a.recv(Role::ClientB), Err(TransportError::PeerClosed(Role::ClientB)));
        assert!(a.send(Role::ClientB, &Frame::new(0, 0, MsgType::Control, vec![])).is_err());
        assert_eq!(a.recv(Role::ClientA), Err(TransportError::NoRoute(Role::ClientA)));
    }
}
