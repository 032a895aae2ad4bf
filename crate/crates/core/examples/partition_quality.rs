//! Compares neighbor-expansion modes and 1D hashing on a seeded power-law graph.

use std::time::Instant;

use glisp_core::{
    adadne_partition, compute_metrics, generate_power_law, hash_partition_1d, interior_fractions,
    PartitionConfig,
};

fn main() -> glisp_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let n = args.first().copied().unwrap_or(10_000) as usize;
    let p = args.get(1).copied().unwrap_or(8) as usize;
    let seed = args.get(2).copied().unwrap_or(1);
    let g = generate_power_law(n, 4, seed)?;
    println!("graph: {} vertices, {} edges", g.num_vertices(), g.num_edges());

    for (name, cfg) in [
        ("adadne", PartitionConfig::new(p).with_seed(seed)),
        ("dne", PartitionConfig::dne(p, 1.1).with_seed(seed)),
    ] {
        let t = Instant::now();
        let a = adadne_partition(&g, &cfg)?;
        let q = compute_metrics(&g, &a)?;
        let interior = interior_fractions(&g, &a)?;
        let mean_interior = interior.iter().sum::<f64>() / interior.len() as f64;
        println!(
            "{name:>7}: rf={:.3} vb={:.3} eb={:.3} interior={:.3} ({:?})",
            q.rf,
            q.vb,
            q.eb,
            mean_interior,
            t.elapsed()
        );
    }
    let a = hash_partition_1d(&g, p, seed)?;
    let q = compute_metrics(&g, &a)?;
    println!("   hash: rf={:.3} vb={:.3} eb={:.3}", q.rf, q.vb, q.eb);
    Ok(())
}
