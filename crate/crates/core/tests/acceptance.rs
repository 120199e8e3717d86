//! Acceptance suite. Runs every criterion, prints one line per criterion
//! and exits nonzero if any of them fails.

use std::collections::HashMap;
use std::process::Command;
use std::time::Instant;

use lobtree::book::simulate;
use lobtree::coupling::{chi_square_gof, distributional_test, pathwise_battery, y_transition_test, Side};
use lobtree::displacement::{DisplacementDist, Probability};
use lobtree::phase::{classify, drift_estimate, survival_estimate, Regime, DEFAULT_BUDGET};
use lobtree::rng::RandomStream;
use lobtree::tree::{generate_gw, Color, ColoredTree, GwSpec, NodeId, OffspringLaw};

fn bench_a() -> DisplacementDist {
    DisplacementDist::from_pairs(&[(-1.0, "2/3"), (1.0, "1/3")]).unwrap()
}

fn bench_b() -> DisplacementDist {
    DisplacementDist::from_pairs(&[(-2.0, "3/4"), (1.0, "1/4")]).unwrap()
}

fn heavy() -> DisplacementDist {
    DisplacementDist::heavy_tail(-1.0, "3/4".parse::<Probability>().unwrap(), 1.5, 1.0).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------- tree enumeration ----------

/// A forest in preorder: each node names its parent among earlier nodes
/// (`None` for a top-level root) and carries its edge label.
type Forest = Vec<(Option<usize>, f64)>;

/// All labeled ordered forests with exactly `s` nodes, for `s <= max`.
fn forests(max: usize, labels: &[f64]) -> Vec<Vec<Forest>> {
    let mut by_size: Vec<Vec<Forest>> = vec![vec![Vec::new()]];
    for s in 1..=max {
        let mut out = Vec::new();
        // First tree has `a` nodes: a root plus a forest of a-1 nodes below it.
        for a in 1..=s {
            for below in &by_size[a - 1] {
                for rest in &by_size[s - a] {
                    for &x in labels {
                        let mut f: Forest = Vec::with_capacity(s);
                        f.push((None, x));
                        f.extend(below.iter().map(|&(p, e)| (Some(p.map_or(0, |i| i + 1)), e)));
                        f.extend(rest.iter().map(|&(p, e)| (p.map(|i| i + a), e)));
                        out.push(f);
                    }
                }
            }
        }
        by_size.push(out);
    }
    by_size
}

fn attach(t: &mut ColoredTree, at: NodeId, f: &Forest, colors: Option<&[Color]>) {
    let mut ids: Vec<NodeId> = Vec::with_capacity(f.len());
    for (i, &(p, e)) in f.iter().enumerate() {
        let parent = p.map_or(at, |j| ids[j]);
        let color = colors.map_or(Color::White, |c| c[i]);
        ids.push(t.add_child(parent, e, color));
    }
}

/// Fresh tree (green root, white elsewhere) with the shape and labels of
/// `y`, plus the id in the copy of every node of `y`.
fn skeleton(y: &ColoredTree) -> (ColoredTree, Vec<NodeId>) {
    let mut t = ColoredTree::initial();
    let mut map = vec![0; y.len()];
    for v in y.preorder().into_iter().skip(1) {
        let parent = map[y.parent(v).unwrap()];
        map[v] = t.add_child(parent, y.edge_label(v), Color::White);
    }
    (t, map)
}

fn whites_last(t: &ColoredTree) -> bool {
    t.nodes().all(|v| {
        let cs = t.children(v);
        cs.windows(2)
            .all(|w| !(t.color(w[0]) == Color::White && t.color(w[1]) != Color::White))
    })
}

/// Checks the three-case identity and the step counter along the whole
/// iteration of `t`. Returns a description of the first failure.
fn check_iteration(t: &ColoredTree, fresh: bool) -> Result<(), String> {
    let kappa = t.kappa(4 * t.len() + 4).ok_or("no extinction")?;
    let mut cur = t.clone();
    let mut y = cur.without_whites();
    let s0 = y.sigma();
    if fresh && s0 != 0 {
        return Err(format!("sigma of fresh tree is {s0}"));
    }
    for n in 0..=kappa {
        if y.sigma() - s0 != n as i64 {
            return Err(format!("sigma at step {n} is {}", y.sigma() - s0));
        }
        let expected = if y.green_count() == 0 {
            y.clone()
        } else if cur.price_white_count().unwrap() > 0 {
            y.add_green_child(cur.first_white_edge().unwrap()).unwrap()
        } else {
            y.kill_price_node().unwrap()
        };
        cur.phi_in_place();
        let next = cur.without_whites();
        if next != expected {
            return Err(format!("identity fails at step {n}:\n{t}"));
        }
        y = next;
    }
    Ok(())
}

fn criterion_3() -> Outcome {
    let labels = [-1.0, 1.0];
    let fs = forests(4, &labels);
    let palette = [Color::White, Color::Green, Color::Red];
    let mut checked = 0u64;
    let mut fresh_checked = 0u64;
    for size in 0..=4 {
        for f in &fs[size] {
            let n = size + 1;
            for code in 0..3u32.pow(n as u32) {
                let colors: Vec<Color> = (0..n).map(|i| palette[(code / 3u32.pow(i as u32) % 3) as usize]).collect();
                let mut t = ColoredTree::root_only(colors[0], 0.0);
                attach(&mut t, 0, f, Some(&colors[1..]));
                if t.check_invariants().is_err() || !whites_last(&t) {
                    continue;
                }
                let fresh = colors[0] == Color::Green && colors[1..].iter().all(|&c| c == Color::White);
                if let Err(e) = check_iteration(&t, fresh) {
                    return outcome(false, e);
                }
                checked += 1;
                fresh_checked += fresh as u64;
            }
        }
    }
    let mut random = 0;
    for i in 0..1000 {
        let p = [0.45, 0.6, 0.75][i % 3];
        let dist = if i % 2 == 0 { bench_a() } else { bench_b() };
        let spec = GwSpec::new(p, dist, 10, 200);
        let t = generate_gw(&spec, &mut RandomStream::new(3, i as u64));
        if let Err(e) = check_iteration(&t, true) {
            return outcome(false, e);
        }
        random += 1;
    }
    outcome(
        true,
        format!("{checked} colored trees ({fresh_checked} fresh) and {random} random trees"),
    )
}

// ---------- reconstruction ----------

const MAX_NODES: usize = 8;

struct FreshTrees {
    /// Key of the tree -> keys of its white-free iterates up to extinction.
    sequences: HashMap<Vec<u64>, Vec<Vec<u64>>>,
}

fn white_free_path(t: &ColoredTree) -> Vec<ColoredTree> {
    let mut cur = t.clone();
    let mut out = vec![cur.without_whites()];
    while cur.green_count() > 0 {
        cur.phi_in_place();
        out.push(cur.without_whites());
    }
    out
}

fn red_counts_match(y: &ColoredTree, t: &ColoredTree) -> bool {
    y.reds().all(|v| match t.node_at(&y.word(v)) {
        Some(u) => t.child_count(u) == y.child_count(v),
        None => false,
    })
}

/// Every fresh tree with at most `MAX_NODES` nodes; also checks that each
/// prefix of its white-free path satisfies the containment condition.
fn fresh_trees(fs: &[Vec<Forest>]) -> Result<FreshTrees, String> {
    let mut sequences = HashMap::new();
    for group in fs.iter().take(MAX_NODES) {
        for f in group {
            let mut t = ColoredTree::initial();
            attach(&mut t, 0, f, None);
            let path = white_free_path(&t);
            for y in path.iter().filter(|y| y.green_count() > 0) {
                if !(y.is_subtree_of(&t) && red_counts_match(y, &t)) {
                    return Err(format!("path of\n{t}reaches\n{y}without containment"));
                }
            }
            sequences.insert(t.key(), path.iter().map(ColoredTree::key).collect());
        }
    }
    Ok(FreshTrees { sequences })
}

/// Calls `visit` on every fresh tree containing `y` whose extra nodes hang
/// below green nodes of `y`, with at most `MAX_NODES` nodes in total.
fn extensions(y: &ColoredTree, fs: &[Vec<Forest>], visit: &mut dyn FnMut(&ColoredTree)) {
    let (base, map) = skeleton(y);
    let greens: Vec<NodeId> = y.greens().map(|g| map[g]).collect();
    fn go(
        t: &ColoredTree,
        greens: &[NodeId],
        budget: usize,
        fs: &[Vec<Forest>],
        visit: &mut dyn FnMut(&ColoredTree),
    ) {
        let Some((&g, rest)) = greens.split_first() else {
            visit(t);
            return;
        };
        for (size, group) in fs.iter().enumerate().take(budget + 1) {
            for f in group {
                let mut u = t.clone();
                attach(&mut u, g, f, None);
                go(&u, rest, budget - size, fs, visit);
            }
        }
    }
    go(&base, &greens, MAX_NODES - y.len(), fs, visit);
}

fn criterion_4() -> Outcome {
    let fs = forests(MAX_NODES - 1, &[-1.0, 1.0]);
    let fresh = match fresh_trees(&fs) {
        Ok(f) => f,
        Err(e) => return outcome(false, e),
    };
    let mut paths = 0u64;
    let mut pairs = 0u64;
    let mut failure = None;
    // Depth-first over white-free paths from the fresh root.
    let mut stack: Vec<Vec<ColoredTree>> = vec![vec![ColoredTree::initial()]];
    while let Some(path) = stack.pop() {
        let y = path.last().unwrap();
        if y.green_count() == 0 {
            continue;
        }
        paths += 1;
        let keys: Vec<Vec<u64>> = path.iter().map(ColoredTree::key).collect();
        let n = keys.len() - 1;
        extensions(y, &fs, &mut |t| {
            pairs += 1;
            let ok = fresh.sequences.get(&t.key()).is_some_and(|seq| seq.len() > n && seq[..=n] == keys[..]);
            if !ok && failure.is_none() {
                failure = Some(format!("tree\n{t}contains\n{y}but does not follow its path"));
            }
        });
        if failure.is_some() {
            break;
        }
        let mut next = vec![y.kill_price_node().unwrap()];
        if y.len() < MAX_NODES {
            next.push(y.add_green_child(-1.0).unwrap());
            next.push(y.add_green_child(1.0).unwrap());
        }
        for z in next {
            let mut p = path.clone();
            p.push(z);
            stack.push(p);
        }
    }
    match failure {
        Some(e) => outcome(false, e),
        None => outcome(
            true,
            format!("{} fresh trees, {paths} paths, {pairs} containing trees", fresh.sequences.len()),
        ),
    }
}

// ---------- other criteria ----------

fn criterion_1() -> Outcome {
    let mut runs = 0;
    for dist in [bench_a(), bench_b()] {
        for (i, p) in [0.55, 0.7, 0.9].into_iter().enumerate() {
            let r = pathwise_battery(p, &dist, 10_000, 100, 100 + i as u64);
            if !r.pass {
                return outcome(false, format!("p={p}: {} of 100 runs diverged", r.statistic));
            }
            runs += r.m;
        }
    }
    outcome(true, format!("{runs} coupled runs of 10000 steps, all exact"))
}

fn criterion_2() -> Outcome {
    let dist = bench_b();
    let (p, n, m) = (0.7, 30, 100_000);
    let tree = distributional_test(p, &dist, n, m, 21, 22, Side::Tree(OffspringLaw::Geometric), 0.01).unwrap();
    let control = distributional_test(p, &dist, n, m, 21, 23, Side::Tree(OffspringLaw::ShiftedGeometric), 0.01).unwrap();
    let stats = |r: &lobtree::coupling::DistributionalReport| {
        r.tests
            .iter()
            .map(|t| format!("{} {:.4}/{:.4}", t.test, t.statistic, t.threshold))
            .collect::<Vec<_>>()
            .join(", ")
    };
    outcome(
        tree.pass && !control.pass,
        format!("tree passes: {} [{}]; control rejected: {} [{}]", tree.pass, stats(&tree), !control.pass, stats(&control)),
    )
}

fn criterion_5() -> Outcome {
    let dist = DisplacementDist::from_pairs(&[(-1.0, "1/2"), (1.0, "1/2")]).unwrap();
    let f = y_transition_test(0.6, &dist, 100_000, 1_000, 5).unwrap();
    let pass = f.tests.iter().all(|t| t.pass);
    let freq = |c: u64| c as f64 / f.transitions as f64;
    let grow: Vec<String> = f.grow.iter().map(|&(x, c)| format!("grow {x}: {:.4}", freq(c))).collect();
    outcome(
        pass,
        format!("{} transitions; {}; kill: {:.4}", f.transitions, grow.join(", "), freq(f.kill)),
    )
}

fn grid_argmin(dist: &DisplacementDist) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=5_000_000u32 {
        let theta = i as f64 * 1e-6;
        let v = dist.mgf(theta).unwrap();
        if v < best.0 {
            best = (v, theta);
        }
    }
    best
}

fn criterion_6() -> Outcome {
    let cases = [
        (bench_a(), 2.0 * 2f64.sqrt() / 3.0, 2f64.ln() / 2.0),
        (bench_b(), 0.375 * 6f64.cbrt(), 6f64.ln() / 3.0),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (dist, a, theta) in cases {
        let m = dist.infimum_mgf();
        let (ga, gt) = grid_argmin(&dist);
        let closed = (m.a - a).abs() <= 1e-9 && (m.theta_star - theta).abs() <= 1e-9;
        let grid = (m.a - ga).abs() <= 1e-6 && (m.theta_star - gt).abs() <= 1e-6;
        pass &= closed && grid;
        detail.push(format!(
            "a={:.10} theta={:.10} (closed-form error {:.1e}/{:.1e}, grid error {:.1e}/{:.1e})",
            m.a,
            m.theta_star,
            (m.a - a).abs(),
            (m.theta_star - theta).abs(),
            (m.a - ga).abs(),
            (m.theta_star - gt).abs()
        ));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let (h, r) = (100_000, 50);
    let up = drift_estimate(0.75, &bench_b(), h, r, 71).unwrap();
    let down = drift_estimate(0.55, &bench_b(), h, r, 72).unwrap();
    let ht = drift_estimate(0.6, &heavy(), h, r, 73).unwrap();
    let c_up = classify(0.75, &bench_b()).regime;
    let c_down = classify(0.55, &bench_b()).regime;
    let ht_report = classify(0.6, &heavy());
    let pass = up.lower() > 0.0
        && down.upper() < 0.0
        && ht.lower() > 0.0
        && c_up == Regime::DivergesUp
        && c_down == Regime::DivergesDown
        && ht_report.regime == Regime::DivergesUp
        && ht_report.mean_x < 0.0
        && ht_report.prob_positive > 0.0;
    outcome(
        pass,
        format!(
            "p=0.75 slope {:.5} +- {:.5} ({c_up}); p=0.55 slope {:.6} +- {:.6} ({c_down}); heavy tail slope {:.4} +- {:.4} ({}, mean {:.4})",
            up.slope, up.ci95, down.slope, down.ci95, ht.slope, ht.ci95, ht_report.regime, ht_report.mean_x
        ),
    )
}

/// Law of the first emptying time from one order, censored at `horizon`,
/// by summing over every coin sequence. Index `horizon + 1` holds the
/// censored mass.
fn tau_oracle(p: f64, horizon: usize) -> Vec<f64> {
    let mut probs = vec![0.0; horizon + 2];
    for bits in 0u32..(1 << horizon) {
        let heads = bits.count_ones() as i32;
        let weight = p.powi(heads) * (1.0 - p).powi(horizon as i32 - heads);
        let mut mass = 1i64;
        let mut tau = horizon + 1;
        for n in 1..=horizon {
            mass += if bits >> (n - 1) & 1 == 1 { 1 } else { -1 };
            if mass == 0 {
                tau = n;
                break;
            }
        }
        probs[tau] += weight;
    }
    probs
}

fn criterion_8() -> Outcome {
    let (p, horizon, samples) = (0.4, 12, 100_000u64);
    let oracle = tau_oracle(p, horizon);
    let dist = bench_b();
    let mut counts = vec![0u64; horizon + 2];
    for i in 0..samples {
        let traj = simulate(p, &dist, horizon, &mut RandomStream::new(8, i), false);
        counts[traj.tau.unwrap_or(horizon + 1)] += 1;
    }
    // Cells of probability zero (even times) carry no information.
    let cells: Vec<usize> = (0..oracle.len()).filter(|&k| oracle[k] > 0.0).collect();
    let stray: u64 = (0..oracle.len()).filter(|&k| oracle[k] == 0.0).map(|k| counts[k]).sum();
    let observed: Vec<u64> = cells.iter().map(|&k| counts[k]).collect();
    let probs: Vec<f64> = cells.iter().map(|&k| oracle[k]).collect();
    let r = chi_square_gof(&observed, &probs).unwrap();
    outcome(
        stray == 0 && r.p_value > 0.01,
        format!("chi-square {:.3} on {} dof, p-value {:.4}, impossible times observed {stray}", r.statistic, r.dof, r.p_value),
    )
}

fn criterion_9() -> Outcome {
    let depths: Vec<usize> = (1..=32).collect();
    let rows = survival_estimate(0.75, &bench_b(), &depths, 10_000, 9, DEFAULT_BUDGET, None).unwrap();
    let monotone = rows.windows(2).all(|w| w[1].q_d <= w[0].q_d);
    let q32 = rows.last().unwrap();
    let sub = survival_estimate(0.45, &bench_b(), &[64], 10_000, 10, DEFAULT_BUDGET, None).unwrap();
    let pass = q32.lower > 0.0 && monotone && sub[0].upper < 0.01;
    outcome(
        pass,
        format!(
            "q_32 = {:.4} [{:.4}, {:.4}], nonincreasing: {monotone}; p=0.45 q_64 = {} upper {:.2e}",
            q32.q_d, q32.lower, q32.upper, sub[0].q_d, sub[0].upper
        ),
    )
}

fn run_cli(args: &[&str]) -> (Vec<u8>, bool) {
    let out = Command::new(env!("CARGO_BIN_EXE_lobtree")).args(args).output().expect("binary runs");
    (out.stdout, out.status.success())
}

fn criterion_10() -> Outcome {
    let d = r#"{"type":"discrete","atoms":[[-2,"3/4"],[1,"1/4"]]}"#;
    let cases: Vec<Vec<&str>> = vec![
        vec!["classify", "--p-grid", "0.45,0.55,0.75", "--format", "csv"],
        vec!["simulate", "--p", "0.7", "--horizon", "2000", "--events"],
        vec!["couple-test", "--p", "0.7", "--horizon", "2000", "--replicas", "8"],
        vec!["couple-test", "--p", "0.7", "--horizon", "20", "--samples", "3000", "--check", "distribution"],
        vec!["y-chain-test", "--p", "0.6", "--samples", "5000", "--horizon", "200"],
        vec!["phase-sweep", "--p-grid", "0.55,0.75", "--horizon", "5000", "--replicas", "8"],
        vec!["survival", "--p", "0.75", "--depth", "4,8,16", "--replicas", "500"],
        vec!["truncation-study", "--p", "0.75", "--depth", "8", "--levels", "0,1", "--replicas", "300"],
    ];
    let dir = tempfile::tempdir().unwrap();
    for (i, case) in cases.iter().enumerate() {
        let mut base: Vec<&str> = case.clone();
        base.extend(["--dist", d, "--seed", "17"]);
        let (a, ok) = run_cli(&base);
        if !ok || a.is_empty() {
            return outcome(false, format!("{} failed", case[0]));
        }
        let (b, _) = run_cli(&base);
        let mut threaded = base.clone();
        threaded.extend(["--threads", "4"]);
        let (c, _) = run_cli(&threaded);
        let file = dir.path().join(format!("out{i}"));
        let file_s = file.to_str().unwrap().to_string();
        let mut to_file = threaded.clone();
        to_file.extend(["--out", &file_s]);
        let (_, ok) = run_cli(&to_file);
        let written = std::fs::read(&file).unwrap_or_default();
        let meta = std::fs::read(format!("{file_s}.meta.json")).unwrap_or_default();
        let (_, _) = run_cli(&to_file);
        let meta_again = std::fs::read(format!("{file_s}.meta.json")).unwrap_or_default();
        if !(ok && a == b && a == c && a == written && !meta.is_empty() && meta == meta_again) {
            return outcome(false, format!("{} output differs between reruns", case[0]));
        }
    }
    outcome(true, format!("{} subcommand configs byte-identical across reruns, --threads 4 and --out", cases.len()))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("pathwise coupling", criterion_1),
        ("distributional coupling", criterion_2),
        ("step counter and white-free identity", criterion_3),
        ("reconstruction", criterion_4),
        ("white-free chain transitions", criterion_5),
        ("mgf minimizer", criterion_6),
        ("phase trichotomy", criterion_7),
        ("emptying time oracle", criterion_8),
        ("barrier survival", criterion_9),
        ("determinism", criterion_10),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        if filter.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {name}: {verdict} ({:.1}s) {}", i + 1, start.elapsed().as_secs_f64(), o.detail);
        failed += !o.pass as usize;
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
