//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use qnet_core::calibration::{
    align_polarization, align_polarization_single_stage, find_correlation_delay, AlignmentConfig, CalibrationError,
    DelaySearchConfig, PeakedCoincidences, PolarizationChannelState,
};
use qnet_core::coexistence::{CarStudyParams, CoexistenceParams};
use qnet_core::controlplane::{
    check_protocol_order, evaluate_verification, PathMeasurement, RequestRecord, RequestState, Simulation,
};
use qnet_core::jones::Jones;
use qnet_core::photonics::{
    classify_nonclassical, dbm_to_mw, singles_and_coincidences, teleportation_bound_check, ChannelModel, EpsModel,
    Nonclassicality, TeleportationBound,
};
use qnet_core::rwa::{release, sp_rwa, Lightpath, RwaConstraints};
use qnet_core::topology::{
    Attenuation, Band, Endpoint, LinkConfig, NetworkGraph, NetworkNode, NodeKind, PortConfig, Route,
    TopologyDocument, WavelengthChannel,
};
use qnet_gateway::{files, output};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

// ---------------------------------------------------------------- rwa

fn random_graph(rng: &mut ChaCha8Rng) -> NetworkGraph {
    let n = rng.random_range(3..=8);
    let mut nodes = Vec::new();
    for i in 0..n {
        let kind = if i < 2 || rng.random_bool(0.25) { NodeKind::QNode } else { NodeKind::OpticalSwitch };
        let id = format!("n{i}");
        nodes.push(NetworkNode {
            ip: (kind == NodeKind::QNode).then(|| format!("10.9.0.{i}")),
            insertion_loss_db: if kind == NodeKind::OpticalSwitch { rng.random_range(0..=2) as f64 * 0.5 } else { 0.0 },
            pdl_db: 0.0,
            pmd_ps: 0.0,
            ports: (0..12).map(|p| PortConfig { index: p, tag: format!("{id}:{p}") }).collect(),
            wavelength_outputs: None,
            qubit_types: vec![],
            id,
            kind,
        });
    }
    let channels = rng.random_range(1..=8usize);
    let grid: Vec<WavelengthChannel> = (0..channels)
        .map(|i| WavelengthChannel {
            label: format!("ch{}", i + 1),
            center_nm: 1540.0 + i as f64 * 0.8,
            width_ghz: 100.0,
            band: Band::CBand,
        })
        .collect();
    let mut next_port = vec![0u32; n];
    let links = (0..rng.random_range(2..=12))
        .map(|l| {
            let a = rng.random_range(0..n);
            let b = (a + rng.random_range(1..n)) % n;
            let (pa, pb) = (next_port[a], next_port[b]);
            next_port[a] += 1;
            next_port[b] += 1;
            LinkConfig {
                id: format!("l{l}"),
                a: Endpoint { node: format!("n{a}"), port: pa },
                b: Endpoint { node: format!("n{b}"), port: pb },
                // Integer kilometres make equal-loss ties common.
                length_km: rng.random_range(1..=20) as f64,
                attenuation: Attenuation { o_band: None, c_band: Some(0.25), l_band: None },
                total_wavelengths: rng.random_range(1..=channels as u32),
                occupancy: BTreeMap::new(),
            }
        })
        .collect();
    NetworkGraph::from_document(TopologyDocument { nodes, links, grid }).expect("generated topology is valid")
}

/// Every loop-free route whose interior nodes are switches.
fn all_routes(g: &NetworkGraph, src: &str, dst: &str) -> Vec<Route> {
    fn walk(
        g: &NetworkGraph,
        at: &str,
        dst: &str,
        nodes: &mut Vec<String>,
        links: &mut Vec<String>,
        out: &mut Vec<Route>,
    ) {
        for link in g.incident(at) {
            let Some(far) = link.other_end(at) else { continue };
            if nodes.contains(&far.node) {
                continue;
            }
            nodes.push(far.node.clone());
            links.push(link.id.clone());
            if far.node == dst {
                out.push(Route { nodes: nodes.clone(), links: links.clone() });
            } else if g.node(&far.node).map(|n| n.kind == NodeKind::OpticalSwitch).unwrap_or(false) {
                walk(g, &far.node, dst, nodes, links, out);
            }
            nodes.pop();
            links.pop();
        }
    }
    let mut out = Vec::new();
    walk(g, src, dst, &mut vec![src.to_string()], &mut Vec::new(), &mut out);
    out
}

/// Lowest loss over every feasible (route, channel) pair.
fn exhaustive_best(g: &NetworkGraph, src: &str, dst: &str) -> Option<f64> {
    let mut best: Option<f64> = None;
    for route in all_routes(g, src, dst) {
        for ch in g.grid() {
            let free = route.links.iter().all(|l| g.link(l).map(|l| l.is_free(&ch.label)).unwrap_or(false));
            if !free {
                continue;
            }
            let loss = g.route_loss_db(&route, ch.band).expect("C-band coefficient present");
            best = Some(best.map_or(loss, |b: f64| b.min(loss)));
        }
    }
    best
}

fn criterion_rwa() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let constraints = RwaConstraints { k_paths: 100_000, ..RwaConstraints::default() };
    let (mut requests, mut assigned, mut mismatches) = (0, 0, Vec::new());
    for graph_no in 0..200 {
        let mut g = random_graph(&mut rng);
        let qnodes: Vec<String> = g.nodes().filter(|n| n.kind == NodeKind::QNode).map(|n| n.id.clone()).collect();
        let mut held: Vec<Lightpath> = Vec::new();
        for r in 0..6 {
            if !held.is_empty() && rng.random_bool(0.3) {
                let lp = held.swap_remove(rng.random_range(0..held.len()));
                release(&mut g, &lp).expect("release held lightpath");
            }
            let a = rng.random_range(0..qnodes.len());
            let b = (a + rng.random_range(1..qnodes.len())) % qnodes.len();
            let (src, dst) = (&qnodes[a], &qnodes[b]);
            let expected = exhaustive_best(&g, src, dst);
            requests += 1;
            let got = sp_rwa(&mut g, src, dst, &constraints, &format!("g{graph_no}r{r}"));
            let got = match got {
                Ok(o) => o.lightpath(),
                Err(e) => {
                    mismatches.push(format!("graph {graph_no} request {r}: error {e}"));
                    continue;
                }
            };
            match (&got, expected) {
                (None, None) => {}
                (Some(lp), Some(best)) if (lp.total_loss_db - best).abs() <= 1e-9 => {}
                _ => mismatches.push(format!(
                    "graph {graph_no} request {r}: sp_rwa {:?} vs exhaustive {expected:?}",
                    got.as_ref().map(|l| l.total_loss_db)
                )),
            }
            if let Some(lp) = got {
                assigned += 1;
                held.push(lp);
            }
        }
    }
    let first = mismatches.first().cloned().unwrap_or_default();
    verdict(
        mismatches.is_empty() && requests >= 1000,
        format!("200 graphs, {requests} requests ({assigned} assigned), {} mismatches {first}", mismatches.len()),
    )
}

// ---------------------------------------------------------- coexistence

fn criterion_coexistence() -> Verdict {
    let p = CoexistenceParams::default();
    let k = match p.calibrate() {
        Ok(k) => k,
        Err(e) => return verdict(false, format!("calibration failed: {e}")),
    };
    let mw = dbm_to_mw(6.8);
    let hv = p.visibility("HV", mw, k).unwrap_or(f64::NAN);
    let da = p.visibility("DA", mw, k).unwrap_or(f64::NAN);
    let cross_hv = p.crossing_dbm("HV", k, FRAC_1_SQRT_2).ok().flatten();
    let cross_da = p.crossing_dbm("DA", k, FRAC_1_SQRT_2).ok().flatten();
    let started = Instant::now();
    let powers: Vec<f64> = (0..=2000).map(|i| -20.0 + i as f64 * 0.02).collect();
    let sweep_ok = ["HV", "DA"].iter().all(|b| {
        p.sweep(b, k, &powers)
            .map(|pts| pts.windows(2).all(|w| w[1].predicted_visibility <= w[0].predicted_visibility))
            .unwrap_or(false)
    });
    let sweep_s = started.elapsed().as_secs_f64();
    let above = |c: Option<f64>| c.is_some_and(|c| c > 6.8);
    let pass = (hv - 0.77).abs() <= 0.02
        && (da - 0.74).abs() <= 0.04
        && above(cross_hv)
        && above(cross_da)
        && sweep_ok
        && sweep_s < 10.0;
    verdict(
        pass,
        format!(
            "HV {:.2}% DA {:.2}% at 6.8 dBm; 70.7% crossing HV {:.2} dBm DA {:.2} dBm; 2x2001-point sweep {:.3} s",
            hv * 100.0,
            da * 100.0,
            cross_hv.unwrap_or(f64::NAN),
            cross_da.unwrap_or(f64::NAN),
            sweep_s
        ),
    )
}

// ------------------------------------------------------------------ car

fn criterion_car() -> Verdict {
    let p = CarStudyParams::default();
    let cal = match p.calibrate() {
        Ok(c) => c,
        Err(e) => return verdict(false, format!("calibration failed: {e}")),
    };
    let pts = match p.sweep(&cal) {
        Ok(pts) => pts,
        Err(e) => return verdict(false, format!("sweep failed: {e}")),
    };
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    let span = last.clock_power_mw - first.clock_power_mw;
    // Reference at intermediate powers: straight line between the two
    // measured endpoints.
    let worst = pts
        .iter()
        .map(|pt| {
            let reference = p.zero_power_car
                + (p.max_power_car - p.zero_power_car) * (pt.clock_power_mw - first.clock_power_mw) / span;
            (pt.car - reference).abs() / reference
        })
        .fold(0.0, f64::max);
    let monotone = pts.windows(2).all(|w| w[1].car < w[0].car);
    let within2 = |got: f64, want: f64| got >= want / 2.0 && got <= want * 2.0;
    let pass = worst <= 0.10 && monotone && within2(first.car_sigma, 22.0) && within2(last.car_sigma, 14.0);
    verdict(
        pass,
        format!(
            "CAR {:.1} -> {:.1} over {} points, worst deviation {:.2}%, monotone {monotone}; sigma {:.1} / {:.1} at {:.2} s integration",
            first.car,
            last.car,
            pts.len(),
            worst * 100.0,
            first.car_sigma,
            last.car_sigma,
            cal.integration_s
        ),
    )
}

// ----------------------------------------------------------- accidentals

fn arm(transmittance: f64, det: f64, dark: f64, tau: f64) -> ChannelModel {
    ChannelModel {
        transmittance,
        detector_efficiency: det,
        dark_rate_hz: dark,
        filter_bw_ghz: 100.0,
        coincidence_window_s: tau,
        raman_coeff: 0.0,
        classical_power_mw: 0.0,
        fiber_length_km: 0.0,
        attenuation_db_per_km: 0.2,
    }
}

fn poisson_times(rate: f64, horizon: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gap = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// Pairs of events from independent streams closer than half a window.
fn coincident_pairs(a: &[f64], b: &[f64], tau: f64) -> u64 {
    let (mut lo, mut hi, mut n) = (0, 0, 0u64);
    for &t in a {
        while lo < b.len() && b[lo] <= t - tau / 2.0 {
            lo += 1;
        }
        while hi < b.len() && b[hi] < t + tau / 2.0 {
            hi += 1;
        }
        n += (hi - lo) as u64;
    }
    n
}

fn criterion_accidentals() -> Verdict {
    let eps = |rate: f64| EpsModel {
        pair_rate_hz: rate,
        intrinsic_visibility: 0.9,
        n_wavelength_outputs: 4,
        rep_rate_hz: 90e6,
        pulse_width_ps: 80.0,
    };
    let sets = [
        (eps(1e9), arm(0.5, 0.25, 100.0, 1e-9), arm(0.5, 0.25, 100.0, 1e-9)),
        (eps(4e8), arm(1.0, 0.3, 1e3, 2e-9), arm(1.0, 0.3, 1e3, 2e-9)),
        (eps(1e9), arm(0.8, 0.5, 100.0, 1e-9), arm(0.1, 0.25, 100.0, 1e-9)),
        (eps(0.0), arm(1.0, 0.25, 5e7, 2e-9), arm(1.0, 0.25, 1e8, 2e-9)),
        (eps(2e8), arm(0.5, 0.6, 2e7, 2e-9), arm(0.5, 0.6, 2e7, 2e-9)),
    ];
    let windows = 1e6;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (e, c1, c2) in &sets {
        let stats = singles_and_coincidences(e, c1, c2);
        let tau = c1.coincidence_window_s;
        let analytic = stats.accidentals_hz;
        if (analytic - stats.singles_1_hz * stats.singles_2_hz * tau).abs() > 1e-9 * analytic {
            return verdict(false, format!("model accidentals {analytic} are not s1 s2 tau"));
        }
        let horizon = windows * tau;
        let a = poisson_times(stats.singles_1_hz, horizon, &mut rng);
        let b = poisson_times(stats.singles_2_hz, horizon, &mut rng);
        let mc = coincident_pairs(&a, &b, tau) as f64 / horizon;
        let rel = (mc - analytic).abs() / analytic;
        worst = worst.max(rel);
        parts.push(format!("{:.2}%", rel * 100.0));
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(worst < 0.05 && secs < 30.0, format!("relative errors [{}] in {secs:.2} s", parts.join(", ")))
}

// ---------------------------------------------------------- polarization

fn criterion_polarization() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = AlignmentConfig::default();
    let (mut two_ok, mut single_open) = (0, 0);
    let mut worst_two: f64 = 0.0;
    for _ in 0..100 {
        let ch = PolarizationChannelState::new(Jones::random_su2(&mut rng));
        let phase = rng.random::<f64>() * TAU;
        if let Ok(r) = align_polarization(&ch, phase, &cfg) {
            worst_two = worst_two.max(r.residual_v.max(r.residual_diag));
            if r.residual_v < 1e-3 && r.residual_diag < 1e-3 {
                two_ok += 1;
            }
        }
        if let Ok(r) = align_polarization_single_stage(&ch, phase, &cfg) {
            if r.residual_diag > 1e-2 {
                single_open += 1;
            }
        }
    }
    verdict(
        two_ok == 100 && single_open >= 95,
        format!(
            "two-stage below 1e-3 in {two_ok}/100 (worst {worst_two:.1e}); single-stage diagonal residual above 1e-2 in {single_open}/100"
        ),
    )
}

// -------------------------------------------------------------- protocol

fn kinds(sim: &Simulation, rec: &RequestRecord) -> Vec<&'static str> {
    rec.trace.iter().map(|&s| sim.trace()[s as usize].payload.kind()).collect()
}

fn positions(k: &[&str], kind: &str) -> Vec<usize> {
    k.iter().enumerate().filter(|(_, x)| **x == kind).map(|(i, _)| i).collect()
}

/// Checks the canonical step order of one request. Recalibration rounds
/// may repeat `Calibrating, Ready, Distributing` while distributing.
fn check_canonical(sim: &Simulation, rec: &RequestRecord, retries: usize) -> Result<(), String> {
    use RequestState::*;
    let states = rec.states();
    check_protocol_order(&states)?;
    let mut expected = vec![Received, EpsSelected, PathsEstablished];
    expected.extend(std::iter::repeat_n(PathsEstablished, retries));
    expected.extend([PathsVerified, Calibrating, Ready, Distributing]);
    if states.len() < expected.len() + 2 || states[..expected.len()] != expected[..] {
        return Err(format!("{}: prefix {states:?}", rec.id));
    }
    let middle = &states[expected.len()..states.len() - 2];
    if !middle.len().is_multiple_of(3) || middle.chunks(3).any(|c| c != [Calibrating, Ready, Distributing]) {
        return Err(format!("{}: recalibration rounds {middle:?}", rec.id));
    }
    if states[states.len() - 2..] != [Ended, Stored] {
        return Err(format!("{}: tail {states:?}", rec.id));
    }

    let k = kinds(sim, rec);
    let first = |kind: &str| positions(&k, kind).first().copied().ok_or(format!("{}: no {kind}", rec.id));
    let last = |kind: &str| positions(&k, kind).last().copied().ok_or(format!("{}: no {kind}", rec.id));
    if !(first("SubmitRequest")? < first("EstablishPaths")?
        && first("EstablishPaths")? < first("PathsEstablished")?
        && first("PathsEstablished")? < first("VerifyPath")?)
    {
        return Err(format!("{}: setup order {k:?}", rec.id));
    }
    // Each Start is preceded by a full set of Ready messages since the
    // previous Start.
    let mut prev = 0;
    for s in positions(&k, "Start") {
        let readies = k[prev..s].iter().filter(|x| **x == "Ready").count();
        if readies != 3 {
            return Err(format!("{}: {readies} Ready before Start at {s}", rec.id));
        }
        prev = s;
    }
    if positions(&k, "Start").is_empty() {
        return Err(format!("{}: no Start", rec.id));
    }
    if !(last("End")? < first("StoreResults")?) {
        return Err(format!("{}: End after StoreResults", rec.id));
    }
    let nacks = positions(&k, "Nack").len();
    if nacks != retries {
        return Err(format!("{}: {nacks} Nack for {retries} retries", rec.id));
    }
    let establishes = positions(&k, "EstablishPaths");
    if establishes.len() != retries + 1 {
        return Err(format!("{}: {} EstablishPaths", rec.id, establishes.len()));
    }
    for (i, n) in positions(&k, "Nack").into_iter().enumerate() {
        if !(establishes[i] < n && n < establishes[i + 1]) {
            return Err(format!("{}: Nack {i} not between establishments", rec.id));
        }
    }
    Ok(())
}

fn gate_checks(threshold: f64, sim: &Simulation) -> Result<(), String> {
    if (threshold - 1.0 / 6.0).abs() > 1e-15 {
        return Err(format!("threshold {threshold}"));
    }
    let m = |on: u64, off: u64| PathMeasurement { loss_estimate_db: 0.0, on_counts: on, off_counts: off, integration_s: 1.0 };
    // noise / click = 1 / (on/off - 1)
    let at = evaluate_verification(6.0, &m(7, 1), threshold);
    let below = evaluate_verification(7.0, &m(8, 1), threshold);
    if at.pass || !below.pass {
        return Err(format!("gate at 1/6 pass={} below pass={}", at.pass, below.pass));
    }
    for rec in sim.records() {
        for v in &rec.verifications {
            let ratio = v.result.noise_rate / v.result.click_rate;
            if v.result.pass && !(v.result.click_rate > 0.0 && ratio < threshold) {
                return Err(format!("{}: pass with noise/click {ratio}", rec.id));
            }
        }
    }
    Ok(())
}

fn run_scenario(name: &str) -> Result<Simulation, String> {
    let loaded = files::load_scenario(&scenarios().join(name), &[]).map_err(|e| e.to_string())?;
    let sim = output::simulate(&loaded, None)?;
    gate_checks(loaded.params.protocol.verify_threshold, &sim)?;
    if !sim.errors().is_empty() {
        return Err(format!("{name}: protocol errors {:?}", sim.errors()));
    }
    Ok(sim)
}

fn criterion_protocol() -> Verdict {
    let check = || -> Result<String, String> {
        let canonical = run_scenario("canonical.json")?;
        let mut n = 0;
        for rec in canonical.records() {
            check_canonical(&canonical, rec, 0)?;
            n += 1;
        }
        if n != 2 {
            return Err(format!("expected 2 canonical requests, got {n}"));
        }
        let retry = run_scenario("verification-failure.json")?;
        let rec = retry.record("retry-1").ok_or("no retry-1 record")?;
        check_canonical(&retry, rec, 1)?;
        let failed = rec.verifications.iter().filter(|v| !v.result.pass).count();
        if failed != 1 {
            return Err(format!("{failed} failed verifications"));
        }
        Ok("2 canonical requests and 1 NACK-retry request in order; gate strict at 1/6".into())
    };
    match check() {
        Ok(d) => verdict(true, d),
        Err(e) => verdict(false, e),
    }
}

// ----------------------------------------------------------- determinism

fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .expect("results directory")
        .filter_map(Result::ok)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("read result file")))
        .filter(|(name, _)| name != output::WALLCLOCK_FILE)
        .collect()
}

fn criterion_determinism() -> Verdict {
    let check = || -> Result<String, String> {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut compared = 0;
        for name in ["canonical.json", "verification-failure.json", "coexistence.json"] {
            let loaded = files::load_scenario(&scenarios().join(name), &[]).map_err(|e| e.to_string())?;
            let a = tmp.path().join(format!("{name}-a"));
            let b = tmp.path().join(format!("{name}-b"));
            output::run_to_dir(&loaded, None, &a)?;
            output::run_to_dir(&loaded, None, &b)?;
            let (fa, fb) = (dir_files(&a), dir_files(&b));
            if fa.keys().collect::<BTreeSet<_>>() != fb.keys().collect::<BTreeSet<_>>() {
                return Err(format!("{name}: different file sets"));
            }
            for (file, bytes) in &fa {
                if fb[file] != *bytes {
                    return Err(format!("{name}: {file} differs"));
                }
                compared += 1;
            }
        }
        Ok(format!("{compared} files byte-identical across 3 scenarios"))
    };
    match check() {
        Ok(d) => verdict(true, d),
        Err(e) => verdict(false, e),
    }
}

// ----------------------------------------------------------------- delay

fn criterion_delay() -> Verdict {
    let cfg = DelaySearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut found, mut counts_ok, mut rejected) = (0, 0, 0);
    for _ in 0..100 {
        let true_delay = rng.random_range(0..100);
        let oracle_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut o = PeakedCoincidences::with_car(true_delay, 100.0, 50.0, oracle_rng);
        if let Ok(r) = find_correlation_delay(&mut o, 0..=99, &cfg) {
            if r.delay == true_delay {
                found += 1;
                if r.counts_at_delay == 2 * cfg.confirm_counts {
                    counts_ok += 1;
                }
            }
        }
    }
    for _ in 0..100 {
        let true_delay = rng.random_range(0..100);
        let oracle_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut o = PeakedCoincidences::with_car(true_delay, 1.0, 50.0, oracle_rng);
        if matches!(find_correlation_delay(&mut o, 0..=99, &cfg), Err(CalibrationError::NotFound { .. })) {
            rejected += 1;
        }
    }
    verdict(
        found == 100 && counts_ok == 100 && rejected >= 95,
        format!(
            "CAR 100: found {found}/100 with {}+{} confirming counts in {counts_ok}; CAR 1: NotFound {rejected}/100",
            cfg.confirm_counts, cfg.confirm_counts
        ),
    )
}

// ----------------------------------------------------------- classifiers

fn criterion_classifiers() -> Verdict {
    use Nonclassicality::*;
    use TeleportationBound::*;
    let v = FRAC_1_SQRT_2;
    let f: f64 = 2.0 / 3.0;
    let vis: [(f64, Option<Nonclassicality>); 8] = [
        (0.0, Some(Classical)),
        (v.next_down(), Some(Classical)),
        (v, Some(Classical)),
        (v.next_up(), Some(NonClassical)),
        (1.0, Some(NonClassical)),
        (-1e-12, None),
        (1.0 + 1e-12, None),
        (f64::NAN, None),
    ];
    let fid: [(f64, Option<TeleportationBound>); 8] = [
        (0.0, Some(NotAboveClassical)),
        (f.next_down(), Some(NotAboveClassical)),
        (f, Some(NotAboveClassical)),
        (f.next_up(), Some(AboveClassical)),
        (1.0, Some(AboveClassical)),
        (-1e-12, None),
        (1.0 + 1e-12, None),
        (f64::NAN, None),
    ];
    let mut wrong = Vec::new();
    for (x, want) in vis {
        let got = classify_nonclassical(x).ok();
        if got != want {
            wrong.push(format!("visibility {x}: {got:?}"));
        }
    }
    for (x, want) in fid {
        let got = teleportation_bound_check(x).ok();
        if got != want {
            wrong.push(format!("fidelity {x}: {got:?}"));
        }
    }
    verdict(wrong.is_empty(), format!("16 truth-table rows, {} wrong {}", wrong.len(), wrong.join("; ")))
}

type Criterion = (&'static str, fn() -> Verdict, Option<Duration>);

fn main() {
    let criteria: [Criterion; 9] = [
        ("rwa oracle equivalence", criterion_rwa, Some(Duration::from_secs(60))),
        ("coexistence reproduction", criterion_coexistence, None),
        ("car reproduction", criterion_car, None),
        ("accidental-rate oracle", criterion_accidentals, Some(Duration::from_secs(30))),
        ("polarization alignment", criterion_polarization, None),
        ("protocol conformance", criterion_protocol, None),
        ("determinism", criterion_determinism, None),
        ("delay search", criterion_delay, None),
        ("classical-bound classifiers", criterion_classifiers, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let mut v = run();
        let elapsed = started.elapsed();
        if let Some(limit) = limit {
            if elapsed > *limit {
                v.pass = false;
                v.detail.push_str(&format!("; over the {} s limit", limit.as_secs()));
            }
        }
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name} ({:.2} s): {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
