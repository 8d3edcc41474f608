mod common;

use common::random_message;
use std::io::Read;
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use pricure::protocol::{PartyId, Role};
use pricure::ring::{RingModulus, RingTensor};
use pricure::sharing::{SessionId, WorkerId};
use pricure::transport::{
    accepts, encode_message, loopback_pair, Connection, Frame, FrameDecoder, FrameError, LinkSettings, Message,
    MessageType, HEADER_LEN,
};
use pricure::{Error, ProtocolError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const SESSION: SessionId = SessionId([3; 16]);

#[test]
fn fuzzed_messages_survive_random_chunking() {
    let m = RingModulus::mersenne61();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let messages: Vec<Message> = (0..10_000).map(|_| random_message(&mut rng)).collect();
    let mut stream = Vec::new();
    for (seq, msg) in messages.iter().enumerate() {
        stream.extend(encode_message(msg, SESSION, seq as u64));
    }
    let mut decoder = FrameDecoder::new();
    let mut got = Vec::new();
    let mut pos = 0;
    while pos < stream.len() {
        let n = rng.gen_range(1..=200).min(stream.len() - pos);
        decoder.push(&stream[pos..pos + n]);
        pos += n;
        while let Some(frame) = decoder.next_frame().unwrap() {
            assert_eq!(frame.seq, got.len() as u64);
            assert_eq!(frame.session, SESSION);
            got.push(Message::decode_payload(frame.kind, &frame.payload, m).unwrap());
        }
    }
    assert_eq!(decoder.buffered(), 0);
    assert_eq!(got, messages);
    for msg in &messages[..500] {
        assert_eq!(msg.encode_payload(), Message::decode_payload(msg.kind(), &msg.encode_payload(), m).unwrap().encode_payload());
    }
}

#[test]
fn header_layout_is_fixed() {
    let bytes = encode_message(&Message::ClientKey([7; 32]), SESSION, 0x0102);
    assert_eq!(&bytes[..4], b"PRCR");
    assert_eq!(bytes[4], 1);
    assert_eq!(bytes[5], 0x09);
    assert_eq!(&bytes[6..22], &[3; 16]);
    assert_eq!(&bytes[22..30], &0x0102u64.to_le_bytes());
    assert_eq!(&bytes[30..38], &32u64.to_le_bytes());
    assert_eq!(bytes.len(), HEADER_LEN + 32);
    for (i, kind) in MessageType::ALL.iter().enumerate() {
        assert_eq!(kind.tag() as usize, i);
        assert_eq!(MessageType::from_tag(i as u8), Some(*kind));
    }
    assert_eq!(MessageType::from_tag(0x0c), None);
}

#[test]
fn corrupt_frames_are_rejected() {
    let m = RingModulus::mersenne61();
    let good = encode_message(&Message::SignQuery(RingTensor::zeros(m, vec![2])), SESSION, 0);
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(Frame::decode(&bad), Err(FrameError::BadMagic(_))));
    assert!(matches!(Frame::decode(&bad[..2]), Err(FrameError::BadMagic(_))));
    let mut bad = good.clone();
    bad[4] = 2;
    assert!(matches!(Frame::decode(&bad), Err(FrameError::BadVersion(2))));
    let mut bad = good.clone();
    bad[5] = 0x7f;
    assert!(matches!(Frame::decode(&bad), Err(FrameError::UnknownType(0x7f))));
    let mut bad = good.clone();
    bad[30..38].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(Frame::decode(&bad), Err(FrameError::LengthOverflow(_))));
    assert!(matches!(Frame::decode(&good[..good.len() - 1]), Err(FrameError::Short { .. })));

    let (frame, _) = Frame::decode(&good).unwrap();
    let mut payload = frame.payload.clone();
    let last = payload.len() - 8;
    payload[last..].copy_from_slice(&u64::MAX.to_le_bytes());
    assert!(matches!(
        Message::decode_payload(frame.kind, &payload, m),
        Err(FrameError::Payload { .. })
    ));
    assert!(Message::decode_payload(frame.kind, &frame.payload[..frame.payload.len() - 1], m).is_err());
    let mut long = frame.payload.clone();
    long.push(0);
    assert!(Message::decode_payload(frame.kind, &long, m).is_err());
    let mut huge = vec![0u8; 4];
    huge.extend(u32::MAX.to_le_bytes());
    assert!(Message::decode_payload(MessageType::Open, &huge, m).is_err());
}

#[test]
fn whitelist_keeps_shares_away_from_aggregator_and_owners() {
    use MessageType as T;
    for kind in [T::ModelShare, T::InputShare, T::TripleInventory, T::Open, T::SignReply, T::SignQuery] {
        assert!(!accepts(Role::Aggregator, kind), "{kind:?}");
        assert!(!accepts(Role::Client, kind), "{kind:?}");
        assert!(!accepts(Role::Owner(1), kind), "{kind:?}");
    }
    assert!(!accepts(Role::Dealer, T::ModelShare));
    assert!(!accepts(Role::Dealer, T::InputShare));
    assert!(accepts(Role::WorkerB, T::ModelShare));
    assert!(accepts(Role::Aggregator, T::PartialResult));
    assert!(accepts(Role::Client, T::SealedResult));
}

fn settings(session: SessionId) -> LinkSettings {
    LinkSettings {
        session,
        modulus: RingModulus::mersenne61(),
        timeout: Duration::from_secs(5),
        transcript: None,
    }
}

#[test]
fn connections_enforce_order_session_and_role() {
    let (w, agg) = (PartyId::new(Role::WorkerA), PartyId::new(Role::Aggregator));
    let (mut a, mut b) = loopback_pair(w, agg, &settings(SESSION));
    a.send(&Message::ModelShare(pricure::protocol::ModelShareBundle {
        owner: 1,
        holder: WorkerId::A,
        weights: vec![],
        biases: vec![],
    }))
    .unwrap();
    assert!(matches!(b.recv(), Err(Error::Protocol(ProtocolError::Forbidden { .. }))));

    let (mut a, mut b) = loopback_pair(w, agg, &settings(SESSION));
    a.send(&Message::Heartbeat).unwrap();
    a.send(&Message::ClientKey([1; 32])).unwrap();
    assert_eq!(b.recv().unwrap(), Message::ClientKey([1; 32]));

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = std::thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let mut c = Connection::tcp(agg, s, &settings(SESSION)).unwrap();
        let first = c.recv();
        let second = c.recv();
        (first, second)
    });
    let mut raw = TcpStream::connect(addr).unwrap();
    use std::io::Write;
    raw.write_all(&encode_message(&Message::ClientKey([0; 32]), SessionId([5; 16]), 0)).unwrap();
    let (first, _) = h.join().unwrap();
    assert!(matches!(first, Err(Error::Protocol(ProtocolError::ForeignSession { .. }))));

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let h = std::thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let mut c = Connection::tcp(agg, s, &settings(SESSION)).unwrap();
        c.recv()
    });
    let mut raw = TcpStream::connect(addr).unwrap();
    raw.write_all(&encode_message(&Message::ClientKey([0; 32]), SESSION, 5)).unwrap();
    assert!(matches!(
        h.join().unwrap(),
        Err(Error::Protocol(ProtocolError::Desync { expected: 0, got: 5 }))
    ));
}

#[test]
fn receive_times_out_naming_the_peer() {
    let (mut a, _b) = loopback_pair(PartyId::new(Role::Aggregator), PartyId::new(Role::WorkerB), &settings(SESSION));
    a.set_timeout(Duration::from_millis(50));
    let err = a.recv().unwrap_err();
    assert!(matches!(&err, Error::Timeout(name) if name.contains("worker-b")), "{err}");
}

#[test]
fn megabyte_payload_echoes_over_tcp() {
    let m = RingModulus::mersenne61();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let big = RingTensor::random(m, vec![1, 1 << 17], &mut rng);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let (wa, wb) = (PartyId::new(Role::WorkerA), PartyId::new(Role::WorkerB));
    let h = std::thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let mut c = Connection::tcp(wb, s, &settings(SESSION)).unwrap();
        c.set_remote(wa);
        let got = c.recv_open().unwrap();
        c.send(&Message::Open(got)).unwrap();
    });
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    let mut c = Connection::connect(wa, &addr, deadline, &settings(SESSION)).unwrap();
    c.send(&Message::Open(vec![big.clone()])).unwrap();
    assert_eq!(c.recv_open().unwrap(), vec![big]);
    h.join().unwrap();
}

#[test]
fn tcp_and_loopback_carry_identical_bytes() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let messages: Vec<Message> = (0..200).map(|_| random_message(&mut rng)).collect();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let reader = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut all = Vec::new();
        s.read_to_end(&mut all).unwrap();
        all
    });
    let client = PartyId::new(Role::Client);
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    let mut tcp = Connection::connect(client, &addr, deadline, &settings(SESSION)).unwrap();
    for msg in &messages {
        tcp.send(msg).unwrap();
    }
    drop(tcp);
    let over_tcp = reader.join().unwrap();

    let (mut a, mut b) = loopback_pair(client, PartyId::new(Role::WorkerA), &settings(SESSION));
    let mut expected = Vec::new();
    for (seq, msg) in messages.iter().enumerate() {
        a.send(msg).unwrap();
        expected.extend(encode_message(msg, SESSION, seq as u64));
    }
    assert_eq!(over_tcp, expected);
    b.set_timeout(Duration::from_millis(10));
    let accepted = messages
        .iter()
        .filter(|m| accepts(Role::WorkerA, m.kind()) && m.kind() != MessageType::Heartbeat)
        .count();
    let mut got = 0;
    while let Ok(msg) = b.recv() {
        assert!(accepts(Role::WorkerA, msg.kind()));
        got += 1;
    }
    assert!(got <= accepted);
}
