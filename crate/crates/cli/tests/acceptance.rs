//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails when any check or runtime limit is missed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use glisp_core::graph::{Direction, Edge, Graph, VertexId};
use glisp_core::inference::CacheCounters;
use glisp_core::netsvc::codec::{Frame, ERROR_OPCODE};
use glisp_core::partition::PartitionAssignment;
use glisp_core::pstore::{build_stores, PartitionStore};
use glisp_core::sampler::{k_hop_sample, load_report, FanoutSpec, Rounding, Routing, SamplingConfig, Shard};
use glisp_core::{
    adadne_partition, compute_metrics, generate_power_law, hash_partition_1d, input_features, layerwise_infer,
    reorder_graph, samplewise_infer, serve, DegreeKind, GnnModel, InferenceConfig, PartitionConfig, Permutation,
    ReorderAlgorithm, RemoteShard, WorkloadPlan,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_3_sigma(hits: u64, trials: u64, p: f64) -> bool {
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - trials as f64 * p).abs() <= 3.0 * sigma
}

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((observed.len() - 1) as f64).unwrap().cdf(stat)
}

fn random_graph(rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(2..150u64);
    let m = rng.gen_range(1..400);
    let edges = (0..m)
        .map(|_| {
            Edge::typed(
                rng.gen_range(0..n) * 11 + 1,
                rng.gen_range(0..n) * 11 + 1,
                rng.gen_range(0..3),
                rng.gen_range(1..5) as f64 * 0.5,
            )
        })
        .collect();
    Graph::from_edges(edges).unwrap()
}

fn c1_metrics() -> Result<String, String> {
    let path = Graph::from_edges(vec![Edge::new(0, 1), Edge::new(1, 2), Edge::new(2, 3)]).unwrap();
    let a = PartitionAssignment::new(2, vec![0, 0, 1]).unwrap();
    let q = compute_metrics(&path, &a).map_err(|e| e.to_string())?;
    ensure(q.rf == 1.25 && q.vb == 1.5 && q.eb == 2.0, format!("path metrics {q:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let g = random_graph(&mut rng);
        let one = PartitionAssignment::new(1, vec![0; g.num_edges()]).unwrap();
        let q = compute_metrics(&g, &one).map_err(|e| e.to_string())?;
        ensure(q.rf == 1.0 && q.vb == 1.0 && q.eb == 1.0, format!("P=1 metrics {q:?}"))?;
    }
    Ok("path (1.25, 1.5, 2.0); 50 graphs at P=1 give (1, 1, 1)".into())
}

fn c2_partition_quality() -> Result<String, String> {
    let g = generate_power_law(10_000, 4, 1).map_err(|e| e.to_string())?;
    let ada = adadne_partition(&g, &PartitionConfig::new(8).with_seed(1)).map_err(|e| e.to_string())?;
    let dne = adadne_partition(&g, &PartitionConfig::dne(8, 1.1).with_seed(1)).map_err(|e| e.to_string())?;
    let qa = compute_metrics(&g, &ada).map_err(|e| e.to_string())?;
    let qd = compute_metrics(&g, &dne).map_err(|e| e.to_string())?;
    let detail = format!(
        "adadne rf={:.3} vb={:.4} eb={:.4}; dne rf={:.3} vb={:.4} eb={:.4}",
        qa.rf, qa.vb, qa.eb, qd.rf, qd.vb, qd.eb
    );
    ensure(qa.vb < qd.vb && qa.eb <= 1.2, detail.clone())?;
    Ok(detail)
}

fn c3_store_fidelity() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..100 {
        let g = random_graph(&mut rng);
        let p = [1usize, 2, 4, 8][case % 4];
        if g.num_edges() < p {
            continue;
        }
        let parts = (0..g.num_edges())
            .map(|e| if e < p { e as u16 } else { rng.gen_range(0..p as u16) })
            .collect();
        let a = PartitionAssignment::new(p, parts).unwrap();
        let stores: Vec<PartitionStore> = build_stores(&g, &a).map_err(|e| e.to_string())?;
        let mut got = Vec::new();
        for s in &stores {
            for e in 0..s.num_edges() {
                got.push((
                    s.in_source_of(e).unwrap(),
                    s.edge_dst(e).unwrap(),
                    s.edge_type_of(e).unwrap(),
                    s.edge_weight(e).unwrap().to_bits(),
                ));
            }
        }
        got.sort_unstable();
        let mut want: Vec<_> = g.edges().iter().map(|e| (e.src, e.dst, e.etype, e.weight.to_bits())).collect();
        want.sort_unstable();
        ensure(got == want, format!("case {case}: edge multiset differs"))?;
        let replicas: usize = stores.iter().map(|s| s.global_ids().len()).sum();
        let covered = g.num_vertices() - g.isolated_count();
        let rf = compute_metrics(&g, &a).map_err(|e| e.to_string())?.rf;
        ensure(
            (replicas as f64 / covered as f64 - rf).abs() < 1e-12,
            format!("case {case}: replica ratio differs from rf"),
        )?;
    }
    Ok("100 graphs, P in {1,2,4,8}".into())
}

fn star(weights: &[f64], parts: Vec<u16>) -> (Vec<Shard>, Routing) {
    let edges: Vec<Edge> =
        weights.iter().enumerate().map(|(i, &w)| Edge::typed(0, i as u64 + 1, 0, w)).collect();
    let g = Graph::from_edges(edges).unwrap();
    let p = *parts.iter().max().unwrap() as usize + 1;
    let a = PartitionAssignment::new(p, parts).unwrap();
    let shards = build_stores(&g, &a).unwrap().into_iter().map(Shard::new).collect();
    (shards, Routing::from_assignment(&g, &a).unwrap())
}

fn sample_star(shards: &[Shard], routing: &Routing, f: u32, cfg: &SamplingConfig) -> Vec<VertexId> {
    let refs: Vec<&Shard> = shards.iter().collect();
    let s = k_hop_sample(&refs, routing, &[0], &FanoutSpec::new(vec![f]).unwrap(), cfg).unwrap();
    let mut v: Vec<VertexId> = s.hops[0].edges.iter().map(|e| e.dst).collect();
    v.sort_unstable();
    v
}

fn c4_sampling_distribution() -> Result<String, String> {
    let (shards, routing) = star(&[1.0; 12], vec![0; 12]);
    let mut counts = [0u64; 13];
    for seed in 0..10_000 {
        for v in sample_star(&shards, &routing, 4, &SamplingConfig { seed, ..Default::default() }) {
            counts[v as usize] += 1;
        }
    }
    for (v, &c) in counts.iter().enumerate().skip(1) {
        ensure(within_3_sigma(c, 10_000, 4.0 / 12.0), format!("uniform vertex {v}: {c}"))?;
    }

    let mut w = vec![1.0; 10];
    w[0] = 10.0;
    let (shards, routing) = star(&w, vec![0; 10]);
    let mut heavy = 0;
    for seed in 0..100_000 {
        let cfg = SamplingConfig { seed, weighted: true, ..Default::default() };
        heavy += (sample_star(&shards, &routing, 1, &cfg) == [1]) as u64;
    }
    ensure(within_3_sigma(heavy, 100_000, 10.0 / 19.0), format!("weighted heavy {heavy}"))?;

    let w = [1.0, 2.0, 3.0, 0.5, 4.0, 1.5];
    let (shards, routing) = star(&w, vec![0, 1, 0, 1, 1, 0]);
    let total: f64 = w.iter().sum();
    let mut pairs = [[0u64; 6]; 6];
    for seed in 0..100_000 {
        let cfg = SamplingConfig { seed, weighted: true, ..Default::default() };
        let got = sample_star(&shards, &routing, 2, &cfg);
        pairs[got[0] as usize - 1][got[1] as usize - 1] += 1;
    }
    let (mut obs, mut exp) = (Vec::new(), Vec::new());
    for i in 0..6 {
        for j in i + 1..6 {
            obs.push(pairs[i][j]);
            let p = w[i] / total * w[j] / (total - w[i]) + w[j] / total * w[i] / (total - w[j]);
            exp.push(100_000.0 * p);
        }
    }
    let p = chi_square_p(&obs, &exp);
    ensure(p > 0.01, format!("two-shard chi-square p = {p}"))?;
    Ok(format!("uniform f/d ok, weighted {heavy}/100000, two-shard p = {p:.3}"))
}

fn max_load(g: &Graph, a: &PartitionAssignment) -> f64 {
    let stores = build_stores(g, a).unwrap();
    let routing = Routing::from_stores(&stores).unwrap();
    let shards: Vec<Shard> = stores.into_iter().map(Shard::new).collect();
    let refs: Vec<&Shard> = shards.iter().collect();
    let seeds: Vec<VertexId> = g.vertices().iter().step_by(5).copied().collect();
    let fan = FanoutSpec::new(vec![15, 10, 5]).unwrap();
    for (b, batch) in seeds.chunks(512).enumerate() {
        let cfg = SamplingConfig { seed: b as u64, ..Default::default() };
        k_hop_sample(&refs, &routing, batch, &fan, &cfg).unwrap();
    }
    load_report(&refs).unwrap().max_normalized()
}

fn c5_load_balance() -> Result<String, String> {
    let g = generate_power_law(10_000, 4, 1).map_err(|e| e.to_string())?;
    let ada = adadne_partition(&g, &PartitionConfig::new(8).with_seed(1)).map_err(|e| e.to_string())?;
    let hash = hash_partition_1d(&g, 8, 1).map_err(|e| e.to_string())?;
    let (wa, wh) = (max_load(&g, &ada), max_load(&g, &hash));
    let detail = format!("max normalized load adadne {wa:.4}, 1d hash {wh:.4}");
    ensure(wa <= wh, detail.clone())?;
    Ok(detail)
}

fn layerwise(
    model: &GnnModel,
    g: &Graph,
    a: &PartitionAssignment,
    perm: Permutation,
    cfg: &InferenceConfig,
) -> glisp_core::InferenceOutput {
    let dir = tempfile::tempdir().unwrap();
    let x = input_features(g, model.input_dim(), 5);
    let plan = WorkloadPlan::new(g, a, perm).unwrap();
    layerwise_infer(model, g, a, &plan, &x, dir.path(), cfg).unwrap()
}

fn c6_layerwise_equivalence() -> Result<String, String> {
    let g = generate_power_law(800, 3, 6).map_err(|e| e.to_string())?;
    let a = adadne_partition(&g, &PartitionConfig::new(4).with_seed(6)).map_err(|e| e.to_string())?;
    let n = g.num_vertices() as u64;
    let mut counts = Vec::new();
    for k in 1..=3usize {
        let mut dims = vec![8];
        dims.extend(std::iter::repeat_n(8, k));
        let model = GnnModel::seeded(&dims, k as u64).unwrap();
        let perm = reorder_graph(&g, Some(&a), ReorderAlgorithm::Pds, DegreeKind::Total, false).unwrap();
        let out = layerwise(&model, &g, &a, perm, &InferenceConfig { chunk_size: 64, ..Default::default() });
        let (sw, sw_count) = samplewise_infer(&model, &g, &input_features(&g, 8, 5)).unwrap();
        let diff = out.embeddings.max_relative_diff(&sw);
        ensure(diff <= 1e-5, format!("K={k}: relative diff {diff}"))?;
        ensure(out.invocations == k as u64 * n, format!("K={k}: layerwise invocations {}", out.invocations))?;
        if k > 1 {
            ensure(sw_count > k as u64 * n, format!("K={k}: samplewise invocations {sw_count}"))?;
        }
        counts.push(format!("K={k} {}/{sw_count}", out.invocations));
    }
    Ok(format!("{} vertices, layerwise/samplewise invocations {}", n, counts.join(", ")))
}

fn c7_static_hits() -> Result<String, String> {
    let g = generate_power_law(2_000, 4, 7).map_err(|e| e.to_string())?;
    let a = adadne_partition(&g, &PartitionConfig::new(8).with_seed(7)).map_err(|e| e.to_string())?;
    let model = GnnModel::seeded(&[8, 8, 8, 8], 7).unwrap();
    let mut reads = 0;
    let mut passes = 0;
    for (alg, fanout) in [(ReorderAlgorithm::Ns, None), (ReorderAlgorithm::Pds, None), (ReorderAlgorithm::Pds, Some(5))] {
        let perm = reorder_graph(&g, Some(&a), alg, DegreeKind::Total, false).unwrap();
        let cfg = InferenceConfig { chunk_size: 128, fanout, ..Default::default() };
        let out = layerwise(&model, &g, &a, perm, &cfg);
        for c in &out.per_layer {
            reads += c.backing_reads;
            passes += 1;
        }
    }
    ensure(reads == 0, format!("{reads} backing-store reads"))?;
    Ok(format!("0 backing-store reads over {passes} layer passes"))
}

fn bench_counters(g: &Graph, a: &PartitionAssignment, alg: ReorderAlgorithm) -> CacheCounters {
    let model = GnnModel::seeded(&[8, 8], 1).unwrap();
    let perm = reorder_graph(g, Some(a), alg, DegreeKind::Total, false).unwrap();
    let cfg = InferenceConfig { chunk_size: 256, dynamic_frac: 0.10, ..Default::default() };
    layerwise(&model, g, a, perm, &cfg).counters()
}

fn c8_reorder_effect() -> Result<String, String> {
    let g = generate_power_law(10_000, 4, 1).map_err(|e| e.to_string())?;
    let a = adadne_partition(&g, &PartitionConfig::new(8).with_seed(1)).map_err(|e| e.to_string())?;
    let ns = bench_counters(&g, &a, ReorderAlgorithm::Ns);
    let ps = bench_counters(&g, &a, ReorderAlgorithm::Ps);
    let pds = bench_counters(&g, &a, ReorderAlgorithm::Pds);
    let detail = format!(
        "chunks fetched ns={} ps={} pds={} (pds/ns = {:.3}); hit ratio ns={:.3} pds={:.3}",
        ns.chunks_fetched,
        ps.chunks_fetched,
        pds.chunks_fetched,
        pds.chunks_fetched as f64 / ns.chunks_fetched as f64,
        ns.hit_ratio(),
        pds.hit_ratio()
    );
    ensure(
        pds.chunks_fetched <= ps.chunks_fetched
            && ps.chunks_fetched <= ns.chunks_fetched
            && pds.hit_ratio() > ns.hit_ratio()
            && ns.backing_reads + ps.backing_reads + pds.backing_reads == 0,
        detail.clone(),
    )?;
    Ok(detail)
}

fn c9_wire() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..100u64 {
        let g = generate_power_law(rng.gen_range(50..300), rng.gen_range(1..4), case).map_err(|e| e.to_string())?;
        let p = rng.gen_range(1..5);
        let a = if rng.gen() {
            hash_partition_1d(&g, p, case).map_err(|e| e.to_string())?
        } else {
            adadne_partition(&g, &PartitionConfig::new(p).with_seed(case)).map_err(|e| e.to_string())?
        };
        let stores = build_stores(&g, &a).map_err(|e| e.to_string())?;
        let routing = Routing::from_stores(&stores).unwrap();
        let servers: Vec<_> = stores.iter().map(|s| serve(s.clone(), "127.0.0.1:0").unwrap()).collect();
        let clients: Vec<RemoteShard> = servers
            .iter()
            .map(|s| RemoteShard::connect(s.local_addr(), Duration::from_secs(5)).unwrap())
            .collect();
        let local: Vec<Shard> = stores.into_iter().map(Shard::new).collect();
        let lrefs: Vec<&Shard> = local.iter().collect();
        let rrefs: Vec<&RemoteShard> = clients.iter().collect();
        let seeds: Vec<VertexId> = g.vertices().iter().step_by(rng.gen_range(1..10)).copied().collect();
        let fan = FanoutSpec::new((0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..10)).collect()).unwrap();
        let cfg = SamplingConfig {
            seed: rng.gen(),
            weighted: rng.gen(),
            direction: if rng.gen() { Direction::Out } else { Direction::In },
            edge_type: None,
            rounding: [Rounding::Stochastic, Rounding::ExpectedFloor, Rounding::Hypergeometric][rng.gen_range(0..3)],
        };
        let (mut want, mut got) = (Vec::new(), Vec::new());
        k_hop_sample(&lrefs, &routing, &seeds, &fan, &cfg).unwrap().write_tsv(&mut want).unwrap();
        k_hop_sample(&rrefs, &routing, &seeds, &fan, &cfg).unwrap().write_tsv(&mut got).unwrap();
        ensure(want == got, format!("case {case}: wire output differs"))?;
    }

    // fuzz one server, then confirm it still answers
    let g = generate_power_law(200, 3, 1).unwrap();
    let a = hash_partition_1d(&g, 1, 1).unwrap();
    let server = serve(build_stores(&g, &a).unwrap().remove(0), "127.0.0.1:0").unwrap();
    let mut stream = std::net::TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut errors = 0;
    for i in 0..1_000u64 {
        let payload: Vec<u8> = (0..rng.gen_range(0..80)).map(|_| rng.gen()).collect();
        let mut frame = Frame::new(rng.gen_range(0..10), i, payload);
        if rng.gen_bool(0.2) {
            frame.header.magic = rng.gen();
        }
        use std::io::Write;
        stream.write_all(&frame.to_bytes()).map_err(|e| e.to_string())?;
        let reply = glisp_core::netsvc::codec::read_frame(&mut stream)
            .map_err(|e| e.to_string())?
            .ok_or("server closed the connection")?;
        ensure(reply.header.request_id == i, "request id mismatch")?;
        errors += (reply.header.opcode == ERROR_OPCODE) as u32;
    }
    RemoteShard::connect(server.local_addr(), Duration::from_secs(5))
        .and_then(|c| c.ping())
        .map_err(|e| format!("server unhealthy after fuzzing: {e}"))?;
    Ok(format!("100 loopback cases identical; 1000 fuzzed frames, {errors} error replies"))
}

fn run_cli(cfg: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_glisp"))
        .args(["run", "--config"])
        .arg(cfg)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!("glisp run failed: {}", String::from_utf8_lossy(&out.stderr)),
    )
}

fn c10_determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let workdir = tmp.path().join(run);
        let cfg = serde_json::json!({
            "workdir": workdir,
            "graph": { "n": 10000, "m": 4, "seed": 1 },
            "partition": { "p": 8, "seed": 1 },
            "sampler": { "fanouts": [15, 10, 5], "batch_size": 512, "batches": 4, "seed": 1 },
            "reorder": { "algorithm": "pds" },
            "inference": { "layers": 2, "chunk_size": 256, "dynamic_frac": 0.1, "seed": 1 }
        });
        let path = tmp.path().join(format!("{run}.json"));
        std::fs::write(&path, cfg.to_string()).map_err(|e| e.to_string())?;
        run_cli(&path)?;
        let mut files = Vec::new();
        for name in ["report.csv", "partition.csv", "interior.csv", "load.csv", "sample.csv", "reorder.csv", "cache.csv", "inference.csv"] {
            files.push((name, std::fs::read(workdir.join(name)).map_err(|e| format!("{name}: {e}"))?));
        }
        outputs.push(files);
    }
    for ((name, a), (_, b)) in outputs[0].iter().zip(&outputs[1]) {
        ensure(a == b, format!("{name} differs between runs"))?;
    }
    Ok("two runs produced identical reports".into())
}

fn main() {
    let checks: [(u32, &str, Check, Duration); 10] = [
        (1, "partition metrics", c1_metrics, Duration::from_secs(1)),
        (2, "AdaDNE vs DNE balance", c2_partition_quality, Duration::from_secs(30)),
        (3, "store fidelity", c3_store_fidelity, Duration::from_secs(60)),
        (4, "sampling distributions", c4_sampling_distribution, Duration::from_secs(120)),
        (5, "sampling load balance", c5_load_balance, Duration::from_secs(60)),
        (6, "layerwise equals samplewise", c6_layerwise_equivalence, Duration::from_secs(60)),
        (7, "static tier serves every read", c7_static_hits, Duration::from_secs(60)),
        (8, "reorder reduces chunk reads", c8_reorder_effect, Duration::from_secs(120)),
        (9, "wire equivalence and fuzzing", c9_wire, Duration::from_secs(120)),
        (10, "pipeline determinism", c10_determinism, Duration::from_secs(300)),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (id, name, check, limit) in checks {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed > limit {
                Err(format!("{d}; took {elapsed:.1?}, limit {limit:?}"))
            } else {
                Ok(d)
            }
        });
        match result {
            Ok(d) => println!("criterion {id:>2} PASS {name} ({elapsed:.2?}): {d}"),
            Err(e) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name} ({elapsed:.2?}): {e}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
