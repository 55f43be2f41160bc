mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use retarget_core::GripState;
use retarget_core::Vec3;
use retarget_service::broker::{Broker, QueuePolicy};
use retarget_service::bridge::WsBridge;
use retarget_service::messages::{
    envelope_json, Payload, RawEnvelope, StateMsg, CONTROL_ERROR, CONTROL_SUBSCRIBE, CONTROL_SUBSCRIBED,
    GRIPPER_STATE, SKELETON,
};
use retarget_service::transport::{read_frame, write_frame, Client, ClientError, TcpServer};
use tungstenite::Message as WsMessage;

const T: Duration = Duration::from_secs(5);

fn state(t: f64) -> Payload {
    Payload::GripperState(StateMsg {
        t,
        state: GripState::Closed,
        confidence: 0.75,
    })
}

#[test]
fn tcp_clients_exchange_typed_messages_in_order() {
    let broker = Broker::new();
    let server = TcpServer::bind("127.0.0.1:0", broker.clone(), QueuePolicy::Unbounded).unwrap();
    let mut rx = Client::connect(server.local_addr()).unwrap();
    rx.subscribe(&[SKELETON, GRIPPER_STATE], false).unwrap();
    let mut tx = Client::connect(server.local_addr()).unwrap();
    let skeletons: Vec<_> = (0..50)
        .map(|k| common::still(Vec3::new(0.01 * k as f64, 0.1, -0.2), k as f64 / 3.0))
        .collect();
    for s in &skeletons {
        tx.publish(SKELETON, &Payload::Skeleton(s.clone())).unwrap();
    }
    tx.publish(GRIPPER_STATE, &state(1.0)).unwrap();
    for (k, s) in skeletons.iter().enumerate() {
        let m = rx.recv(T).unwrap();
        assert_eq!(m.topic, SKELETON);
        assert_eq!(m.seq, k as u64 + 1);
        assert_eq!(m.payload, Payload::Skeleton(s.clone()));
    }
    let m = rx.recv(T).unwrap();
    assert_eq!((m.topic.as_str(), m.seq), (GRIPPER_STATE, 1));
    assert_eq!(m.payload, state(1.0));
}

#[test]
fn server_restamps_sequence_numbers() {
    let broker = Broker::new();
    let sub = broker.subscribe(&[GRIPPER_STATE], QueuePolicy::Unbounded).unwrap();
    let server = TcpServer::bind("127.0.0.1:0", broker, QueuePolicy::Unbounded).unwrap();
    let mut raw = TcpStream::connect(server.local_addr()).unwrap();
    // a client with a careless counter
    for seq in [7, 7, 3] {
        write_frame(&mut raw, &envelope_json(GRIPPER_STATE, seq, 0.0, &state(0.0))).unwrap();
    }
    let seqs: Vec<u64> = (0..3).map(|_| sub.recv_timeout(T).unwrap().seq).collect();
    assert_eq!(seqs, vec![1, 2, 3]);
}

#[test]
fn bad_input_gets_error_envelopes_and_connection_survives() {
    let broker = Broker::new();
    let server = TcpServer::bind("127.0.0.1:0", broker, QueuePolicy::Unbounded).unwrap();
    let mut raw = TcpStream::connect(server.local_addr()).unwrap();
    raw.set_read_timeout(Some(T)).unwrap();
    let cases = [
        "not json".to_string(),
        envelope_json("/no/such/topic", 1, 0.0, &state(0.0)),
        // wrong payload type for the topic
        envelope_json(SKELETON, 1, 0.0, &serde_json::json!([1, 2, 3])),
        envelope_json(GRIPPER_STATE, 1, 0.0, &serde_json::json!({"t": 0, "state": "ajar", "confidence": 1})),
        envelope_json(CONTROL_SUBSCRIBE, 0, 0.0, &serde_json::json!({"topics": ["/nope"]})),
    ];
    for case in &cases {
        write_frame(&mut raw, case).unwrap();
        let reply = read_frame(&mut raw, 1 << 20).unwrap().unwrap();
        let env: RawEnvelope = serde_json::from_str(&reply).unwrap();
        assert_eq!(env.topic, CONTROL_ERROR, "{case}");
    }
    write_frame(&mut raw, &envelope_json(CONTROL_SUBSCRIBE, 0, 0.0, &serde_json::json!({"topics": [GRIPPER_STATE]})))
        .unwrap();
    let ack: RawEnvelope = serde_json::from_str(&read_frame(&mut raw, 1 << 20).unwrap().unwrap()).unwrap();
    assert_eq!(ack.topic, CONTROL_SUBSCRIBED);
}

#[test]
fn client_reports_unknown_topics() {
    let broker = Broker::new();
    let server = TcpServer::bind("127.0.0.1:0", broker, QueuePolicy::Unbounded).unwrap();
    let mut c = Client::connect(server.local_addr()).unwrap();
    assert!(matches!(c.subscribe(&["/nope"], true), Err(ClientError::UnknownTopic(t)) if t == "/nope"));
    assert!(matches!(c.publish("/nope", &state(0.0)), Err(ClientError::UnknownTopic(_))));
}

#[test]
fn oversized_length_prefix_closes_connection() {
    let broker = Broker::new();
    let server = TcpServer::bind("127.0.0.1:0", broker, QueuePolicy::Unbounded).unwrap();
    let mut raw = TcpStream::connect(server.local_addr()).unwrap();
    raw.set_read_timeout(Some(T)).unwrap();
    raw.write_all(&u32::MAX.to_be_bytes()).unwrap();
    let mut buf = [0u8; 1];
    assert_eq!(raw.read(&mut buf).unwrap_or(0), 0);
}

#[test]
fn lagging_network_subscriber_stays_ordered_and_current() {
    let broker = Broker::new();
    let server = TcpServer::bind("127.0.0.1:0", broker.clone(), QueuePolicy::DropOldest(64)).unwrap();
    let mut rx = Client::connect(server.local_addr()).unwrap();
    rx.subscribe(&[GRIPPER_STATE], false).unwrap();
    // publish faster than the socket drains; nothing may arrive out of order
    let mut p = broker.publisher();
    for k in 0..20_000 {
        p.publish(GRIPPER_STATE, state(k as f64)).unwrap();
    }
    let mut last = 0;
    let mut n = 0;
    while let Ok(m) = rx.recv(Duration::from_millis(500)) {
        assert!(m.seq > last);
        last = m.seq;
        n += 1;
    }
    assert_eq!(last, 20_000);
    assert!(n <= 20_000);
}

#[test]
fn websocket_bridge_speaks_the_same_envelopes() {
    let broker = Broker::new();
    let bridge = WsBridge::bind("127.0.0.1:0", broker.clone(), QueuePolicy::Unbounded).unwrap();
    let tcp = TcpServer::bind("127.0.0.1:0", broker.clone(), QueuePolicy::Unbounded).unwrap();

    let (mut ws, _) = tungstenite::connect(format!("ws://{}", bridge.local_addr())).unwrap();
    let subscribe = envelope_json(CONTROL_SUBSCRIBE, 0, 0.0, &serde_json::json!({"topics": [SKELETON]}));
    ws.send(WsMessage::text(subscribe)).unwrap();
    let ack: RawEnvelope = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(ack.topic, CONTROL_SUBSCRIBED);

    // TCP publisher → browser
    let mut tcp_rx = Client::connect(tcp.local_addr()).unwrap();
    tcp_rx.subscribe(&[SKELETON, GRIPPER_STATE], false).unwrap();
    let mut tx = Client::connect(tcp.local_addr()).unwrap();
    let s = common::still(Vec3::new(0.1, 0.2, -0.3), 1.5);
    tx.publish(SKELETON, &Payload::Skeleton(s.clone())).unwrap();
    let text = ws.read().unwrap().to_text().unwrap().to_string();
    let via_tcp = tcp_rx.recv(T).unwrap();
    assert_eq!(text, via_tcp.json, "bridge and TCP frames differ");

    // browser → TCP subscriber
    ws.send(WsMessage::text(envelope_json(GRIPPER_STATE, 1, 0.0, &state(2.0)))).unwrap();
    let m = tcp_rx.recv(T).unwrap();
    assert_eq!(m.payload, state(2.0));

    // errors come back as envelopes
    ws.send(WsMessage::text("{}")).unwrap();
    let err: RawEnvelope = serde_json::from_str(ws.read().unwrap().to_text().unwrap()).unwrap();
    assert_eq!(err.topic, CONTROL_ERROR);
    ws.close(None).unwrap();
}
