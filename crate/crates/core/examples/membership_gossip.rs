//! Five simulated nodes join through one seed; gossip spreads the full
//! membership, then a node leaves.

use std::time::Duration;

use swarmlearn::net::codec::{Payload, SwarmMessage};
use swarmlearn::net::sim::{sim_addr, SimNet, SimNetConfig};
use swarmlearn::net::{gossip_round, join, Transport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let net = SimNet::new(SimNetConfig::default())?;
    let mut nodes: Vec<_> = (0..5).map(|id| net.endpoint(id)).collect();
    for ep in nodes.iter_mut().skip(1) {
        join(&[sim_addr(0)], ep)?;
    }
    let show = |nodes: &[swarmlearn::net::SimEndpoint], when: &str| {
        println!("{when}:");
        for ep in nodes {
            println!("  node {} knows {:?}", ep.node_id(), ep.table().ids());
        }
    };
    show(&nodes, "after join");

    for ep in nodes.iter_mut() {
        gossip_round(ep, Duration::from_millis(200));
    }
    show(&nodes, "after one gossip round");

    let leaver = nodes.pop().expect("five nodes");
    let bye = SwarmMessage::new(leaver.node_id(), Payload::Leave);
    for (_, peer) in leaver.table().iter() {
        let mut ep = net.endpoint_at(leaver.node_id(), leaver.address());
        let _ = ep.request(&peer.addr, &bye, Duration::from_millis(200));
    }
    show(&nodes, "after node 4 leaves");
    println!("frames on the wire: {}", net.transcript().len());
    Ok(())
}
