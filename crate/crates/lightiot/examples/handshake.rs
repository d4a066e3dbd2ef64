//! Drives one pairing and one authentication by hand, printing each
//! frame as it crosses the wire.

use lightiot::registry::{Registry, Role};
use lightiot::rng::DetRng;
use lightiot::{Client, Gateway, Server, Timestamp};

fn main() {
    let mut rng = DetRng::new(42);

    // Offline registration: the server learns every tuple.
    let (client_id, client_secret, client_pseudo) = (rng.next_id(), rng.next_id(), rng.next_id());
    let (gw_id, gw_secret, gw_pseudo) = (rng.next_id(), rng.next_id(), rng.next_id());

    let mut registry = Registry::new();
    registry
        .provision(Role::Client, client_id, client_secret, client_pseudo)
        .unwrap();
    registry
        .provision(Role::Gateway, gw_id, gw_secret, gw_pseudo)
        .unwrap();

    let delta_t = 2000;
    let mut client = Client::new(client_id, client_secret, client_pseudo, delta_t);
    let mut gateway = Gateway::new(gw_id, gw_secret, gw_pseudo, delta_t);
    let mut server = Server::new(registry, delta_t);
    server.assign_gateway(client_id, gw_id);

    let t = |ms| Timestamp(ms);

    // Pairing: client <-> server.
    let m1 = client.start_pairing(t(1000), &mut rng);
    println!("M1  client -> server  {} bits", m1.len() * 8);
    let m2 = server.handle_pair_request(&m1, t(1010)).unwrap();
    println!("M2  server -> client  {} bits", m2.len() * 8);
    client.finish_pairing(&m2, t(1020)).unwrap();
    println!("paired: client now holds its gateway identity\n");

    // Authentication: client <-> gateway <-> server.
    let m3 = client.start_auth(t(2000), &mut rng).unwrap();
    println!("M3  client -> gateway {} bits", m3.len() * 8);
    let m4 = gateway.handle_auth_request(&m3, t(2010), &mut rng).unwrap();
    println!("M4  gateway -> server {} bits", m4.len() * 8);
    let m5 = server.handle_auth_relay(&m4, t(2020)).unwrap();
    println!("M5  server -> gateway {} bits", m5.len() * 8);
    let (m6, gateway_key) = gateway.handle_auth_grant(&m5, t(2030)).unwrap();
    println!("M6  gateway -> client {} bits", m6.len() * 8);
    let client_key = client.finish_auth(&m6, t(2040)).unwrap();

    assert_eq!(client_key.key, gateway_key.key);
    println!("\nsession key agreed: {}", client_key.key.to_hex());
}
