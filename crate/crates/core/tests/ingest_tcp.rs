mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::net::TcpStream;
use std::sync::Arc;
use std::time::{Duration, Instant};

use iotrule::dsb::{Dsb, DsbConfig, Lookup};
use iotrule::ingest::{AccepterConfig, DeviceMessage, Ingestor, TcpAccepter};
use iotrule::Index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn message(device: &str, attributes: impl IntoIterator<Item = (String, f64)>) -> DeviceMessage {
    DeviceMessage {
        device_id: device.into(),
        device_type: "Portable".into(),
        attributes: attributes.into_iter().collect::<BTreeMap<_, _>>(),
        received_at: chrono::Utc::now(),
    }
}

#[test]
fn concurrent_connections_are_all_applied() {
    let dsb = Arc::new(Dsb::default());
    let indices: Vec<Index> = (0..20)
        .map(|i| Index::new(format!("dev{i}"), "Portable", "temperature"))
        .collect();
    for index in &indices {
        dsb.register(index);
    }
    let ingestor = Arc::new(Ingestor::new(Arc::clone(&dsb)));
    let accepter = TcpAccepter::bind(
        "127.0.0.1:0",
        Arc::clone(&ingestor),
        AccepterConfig::default(),
    )
    .unwrap();
    let addr = accepter.local_addr();
    const PER_CONNECTION: usize = 200;

    let started = Instant::now();
    let writers: Vec<_> = (0..20)
        .map(|i| {
            std::thread::spawn(move || {
                let mut stream = TcpStream::connect(addr).unwrap();
                for n in 0..PER_CONNECTION {
                    let msg = message(&format!("dev{i}"), [("temperature".to_string(), n as f64)]);
                    writeln!(stream, "{}", msg.to_line()).unwrap();
                }
                stream.flush().unwrap();
            })
        })
        .collect();
    for w in writers {
        w.join().unwrap();
    }
    let total = (20 * PER_CONNECTION) as u64;
    assert!(common::wait_until(Duration::from_secs(10), || ingestor
        .stats()
        .applied
        == total));
    let elapsed = started.elapsed();
    println!(
        "ingested {total} messages over 20 connections in {elapsed:?} ({:.0} msg/s)",
        total as f64 / elapsed.as_secs_f64()
    );

    // each connection is read in order, so the last value wins
    for index in &indices {
        assert_eq!(
            dsb.get(index),
            Lookup::Value {
                value: (PER_CONNECTION - 1) as f64,
                session: PER_CONNECTION as u64
            }
        );
    }
    assert_eq!(accepter.connection_counts().0, 20);
}

#[test]
fn gate_never_drops_registered_attributes() {
    let dsb = Arc::new(Dsb::new(DsbConfig {
        filter_bits: 1 << 12,
        filter_hashes: 3,
    }));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let registered: Vec<Index> = (0..300)
        .map(|i| Index::new(format!("d{}", i % 30), "Portable", format!("a{}", i / 30)))
        .collect();
    for index in &registered {
        dsb.register(index);
    }
    let ingestor = Ingestor::new(Arc::clone(&dsb));
    for round in 0..2000 {
        let device = rng.gen_range(0..40);
        let attributes: Vec<(String, f64)> = (0..rng.gen_range(1..15))
            .map(|a| (format!("a{a}"), round as f64))
            .collect();
        let msg = message(&format!("d{device}"), attributes.clone());
        let applied = ingestor.handle_message(&msg);
        let expected = attributes
            .iter()
            .filter(|(a, _)| {
                registered.contains(&Index::new(format!("d{device}"), "Portable", a.as_str()))
            })
            .count();
        assert_eq!(applied, expected, "round {round}");
    }
    let stats = ingestor.stats();
    assert!(stats.gated_out > 0);
    assert_eq!(stats.attributes, stats.gated_out + dsb.stats().probes);
}

#[test]
fn gate_keeps_probes_near_one_per_message() {
    let dsb = Arc::new(Dsb::default());
    let ingestor = Ingestor::new(Arc::clone(&dsb));
    dsb.register(&Index::new("sensor", "Portable", "attr0"));
    for i in 0..10_000 {
        let attributes = (0..50).map(|a| (format!("attr{a}"), i as f64));
        ingestor.handle_message(&message("sensor", attributes));
    }
    let probes = dsb.stats().probes as f64 / 10_000.0;
    println!("cache probes per message: {probes:.4}");
    assert!(probes <= 1.5, "{probes} probes per message");
    assert_eq!(ingestor.stats().applied, 10_000);
}

#[test]
fn malformed_lines_do_not_close_the_connection() {
    let dsb = Arc::new(Dsb::default());
    let index = Index::new("1", "Portable", "temperature");
    dsb.register(&index);
    let ingestor = Arc::new(Ingestor::new(Arc::clone(&dsb)));
    let accepter = TcpAccepter::bind(
        "127.0.0.1:0",
        Arc::clone(&ingestor),
        AccepterConfig::default(),
    )
    .unwrap();
    let mut stream = TcpStream::connect(accepter.local_addr()).unwrap();
    writeln!(stream, "not json").unwrap();
    writeln!(stream, r#"{{"device_type":"Portable","temperature":1}}"#).unwrap();
    writeln!(
        stream,
        r#"{{"device_id":"1","device_type":"Portable","temperature":23.4}}"#
    )
    .unwrap();
    stream.flush().unwrap();
    assert!(common::wait_until(Duration::from_secs(5), || ingestor
        .stats()
        .applied
        == 1));
    assert_eq!(ingestor.stats().malformed, 2);
    assert_eq!(
        dsb.get(&index),
        Lookup::Value {
            value: 23.4,
            session: 1
        }
    );
}
