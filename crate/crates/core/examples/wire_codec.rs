//! Encodes each message kind and prints the frame bytes.

use swarmlearn::net::codec::{
    decode, encode, AckStatus, Kind, Payload, PeerInfo, SwarmMessage, WeightsBody,
};

fn main() {
    let messages = [
        SwarmMessage::new(
            7,
            Payload::Hello {
                listen_addr: "127.0.0.1:9001".into(),
            },
        ),
        SwarmMessage::new(
            7,
            Payload::PeerList(vec![PeerInfo {
                node_id: 2,
                addr: "10.0.0.2:9000".into(),
                last_seen_ms: 1_234,
            }]),
        ),
        SwarmMessage::new(
            7,
            Payload::Weights(WeightsBody {
                round: 1,
                epoch: 6,
                sample_count: 700,
                values: vec![0.5, -1.25],
            }),
        ),
        SwarmMessage::new(
            7,
            Payload::Ack {
                acked: Kind::Weights,
                status: AckStatus::Ok,
                round: 1,
            },
        ),
        SwarmMessage::new(7, Payload::Leave),
    ];
    for msg in &messages {
        let frame = encode(msg).expect("fits in a frame");
        let back = decode(&frame).expect("round trip");
        assert_eq!(&back, msg);
        println!(
            "{:?} ({} bytes)\n  {}",
            msg.kind(),
            frame.len(),
            hex::encode(&frame)
        );
    }

    // Decoding never panics; garbage yields a named error.
    println!("{:?}", decode(b"SWRM\x02garbage").unwrap_err());
}
