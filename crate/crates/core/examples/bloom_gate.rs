//! How the Bloom gate keeps unregistered attributes away from the cache.

use std::sync::Arc;

use iotrule::dsb::{BloomFilter, Dsb, DsbConfig};
use iotrule::ingest::Ingestor;
use iotrule::Index;

fn main() {
    let dsb = Arc::new(Dsb::new(DsbConfig::default()));
    dsb.register(&Index::new("7", "Sensor", "a0"));
    let ingestor = Ingestor::new(Arc::clone(&dsb));

    // one registered attribute among fifty per message
    for n in 0..10_000 {
        let mut line = String::from(r#"{"device_id":"7","device_type":"Sensor""#);
        for a in 0..50 {
            line.push_str(&format!(r#","a{a}":{n}"#));
        }
        line.push('}');
        ingestor.handle_line(&line).expect("valid line");
    }
    let stats = ingestor.stats();
    println!(
        "messages={} attributes={} gated_out={} applied={} cache probes={} ({:.3} per message)",
        stats.messages,
        stats.attributes,
        stats.gated_out,
        stats.applied,
        dsb.stats().probes,
        dsb.stats().probes as f64 / stats.messages as f64
    );

    let mut filter = BloomFilter::with_rate(100_000, 0.01);
    for i in 0..100_000 {
        filter.insert(&format!("member-{i}"));
    }
    println!(
        "{} bits, {} hashes, estimated false-positive rate {:.4}",
        filter.bits(),
        filter.hashes(),
        filter.estimated_fp_rate(100_000)
    );
}
