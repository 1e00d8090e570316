//! Sample one cooperative-localization network, print its topology, and
//! save it as a JSON fixture.
//!
//!     cargo run --release -p vqmpnn --example generate_topology

use vqmpnn::scenario::{NodeKind, ScenarioParams};

fn main() {
    let params = ScenarioParams::default();
    let scenario = params
        .generate(7)
        .expect("default geometry never isolates agents");

    println!(
        "{} anchors + {} agents in a {:.0} m square, range {:.0} m",
        scenario.n_nodes() - scenario.n_agents(),
        scenario.n_agents(),
        params.area,
        params.range
    );
    let degrees: Vec<usize> = scenario.neighbors.iter().map(|n| n.len()).collect();
    let mean = degrees.iter().sum::<usize>() as f64 / degrees.len() as f64;
    println!(
        "directed measurements: {}, mean neighbors {:.1} (min {}, max {})",
        scenario.n_directed_edges(),
        mean,
        degrees.iter().min().unwrap(),
        degrees.iter().max().unwrap()
    );

    for (i, p) in scenario.positions.iter().enumerate() {
        let kind = match scenario.kinds[i] {
            NodeKind::Anchor => "anchor",
            NodeKind::Agent => "agent ",
        };
        println!(
            "  node {i:>2} {kind} at ({:6.2}, {:6.2}) with {} neighbors",
            p.x, p.y, degrees[i]
        );
    }

    let path = std::path::Path::new("scenario_fixture.json");
    scenario.save(path).expect("writable working directory");
    println!("saved fixture to {}", path.display());
}
