use starfront_core::scenario::Scenario;
use starfront_core::sim::{run, RunStrategy};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).cloned().unwrap_or_else(|| "no-coord".into());
    let strategy = RunStrategy::parse(&which).unwrap();
    let w: f64 = args.get(2).map_or(25.0, |s| s.parse().unwrap());
    let h: f64 = args.get(3).map_or(25.0, |s| s.parse().unwrap());
    let n: usize = args.get(4).map_or(2, |s| s.parse().unwrap());
    let boxes: usize = args.get(5).map_or(2, |s| s.parse().unwrap());
    let seed: u64 = args.get(6).map_or(1, |s| s.parse().unwrap());
    let sc = Scenario::standard(w, h, n, boxes);
    let t0 = std::time::Instant::now();
    let out = run(&sc, strategy, seed).unwrap();
    println!("wall: {:?}", t0.elapsed());
    println!("{:?}", out.metrics);
    println!("events: {}", out.logs.events.len());
    let mut counts = std::collections::BTreeMap::new();
    for e in &out.logs.events {
        let kind = e.split(',').nth(2).unwrap_or("?").to_string();
        *counts.entry(kind).or_insert(0) += 1;
    }
    println!("{counts:?}");
    for e in out.logs.events.iter().take(15) {
        println!("  {e}");
    }
    println!("tail:");
    for e in out.logs.events.iter().rev().take(30).collect::<Vec<_>>().iter().rev() {
        println!("  {e}");
    }
    for e in out.logs.events.iter().filter(|e| e.contains("shadowfrontier")) {
        println!("SHADOW {e}");
    }
    println!("meetlib:");
    for e in out
        .logs
        .events
        .iter()
        .filter(|e| {
            e.contains("libstate")
                || e.contains("meetlib")
                || e.contains("cluster")
                || e.contains("svpinfo")
                || e.contains("frontierinfo")
                || e.contains("shadowfrontier")
        })
        .take(300)
    {
        println!("  {e}");
    }
    println!("protocol ({}):", out.logs.protocol.len());
    for e in out.logs.protocol.iter().take(20) {
        println!("  {e}");
    }
    println!("plans ({}):", out.logs.plans.len());
    for e in out.logs.plans.iter().take(15) {
        println!("  {e}");
    }
}
