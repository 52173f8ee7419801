//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::io::Write as _;
use std::time::Instant;

use lora_pcsma::config::{Offsets, RunConfig};
use lora_pcsma::gateway::ReceptionOutcome;
use lora_pcsma::mac::MacMode;
use lora_pcsma::metrics::{compute_prr, mean_std, write_csv};
use lora_pcsma::phy::{
    above_sensitivity, airtime, detect_range_m, received_power_dbm, LossParams, RadioParams, Role,
    SensitivityTable, SpreadingFactor,
};
use lora_pcsma::scenario::{run_scenario, write_trace, RunResult};
use lora_pcsma::sweep::{aloha_base, aloha_validation, pure_aloha_throughput, run_sweep, Grid};
use lora_pcsma::topology::PersistencePolicy;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn sf(v: u8) -> SpreadingFactor {
    SpreadingFactor::new(v).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(cfg: &RunConfig) -> Result<RunResult, String> {
    let r = run_scenario(cfg).map_err(|e| e.to_string())?;
    r.verify().map_err(|e| e.to_string())?;
    Ok(r)
}

fn prr_generated(r: &RunResult) -> f64 {
    compute_prr(&r.counters)
        .unwrap()
        .generated
        .unwrap_or(f64::NAN)
}

/// 1. Pure-ALOHA throughput at G = 0.5 and G = 1.0, 200 000 packet-times each.
fn aloha_anchor() -> Outcome {
    let base = aloha_base();
    let mut parts = Vec::new();
    for (g, expected) in [(0.5, 0.184), (1.0, 0.135)] {
        let start = Instant::now();
        let pts = aloha_validation(&base, &[g], 200_000.0).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let s = pts[0].throughput;
        ensure((s - expected).abs() <= 0.010, || {
            format!("G={g}: S={s:.4}, expected {expected} +/- 0.010")
        })?;
        ensure((s - pure_aloha_throughput(g)).abs() <= 0.010, || {
            format!("G={g}: S={s:.4} vs G*e^-2G={:.4}", pure_aloha_throughput(g))
        })?;
        ensure(elapsed < 60.0, || format!("G={g}: took {elapsed:.1} s"))?;
        parts.push(format!("S({g})={s:.4} in {elapsed:.2}s"));
    }
    Ok(parts.join(", "))
}

/// 2. One device, 100 s period, zero offset, one hour.
fn single_device() -> Outcome {
    let mut cfg = RunConfig::new(1);
    cfg.period_set_s = vec![100.0];
    cfg.offsets = Offsets::Zero;
    let r = run(&cfg)?;
    let c = r.counters;
    ensure(c.generated == 36 && c.received == 36, || format!("{c:?}"))?;
    ensure(prr_generated(&r) == 1.0, || "PRR != 1".into())?;
    Ok("generated=36 received=36 PRR=1".into())
}

/// 3. Single cluster p-CSMA: no collisions and no overlapping visible transmissions.
fn non_hidden_exclusion() -> Outcome {
    let mut total = 0;
    for p in [0.25, 0.5, 1.0] {
        for seed in 1..=10 {
            let mut cfg = RunConfig::new(20);
            cfg.persistence = PersistencePolicy::Global(p);
            cfg.seed = seed;
            let r = run(&cfg)?;
            ensure(r.counters.collided == 0, || {
                format!("p={p} seed={seed}: {} collided", r.counters.collided)
            })?;
            let v = &r.topology.vicinity;
            for (i, a) in r.log.iter().enumerate() {
                for b in &r.log[i + 1..] {
                    let overlap = a.air_start < b.air_end && b.air_start < a.air_end;
                    ensure(!(overlap && v.mutually_visible(a.device, b.device)), || {
                        format!(
                            "p={p} seed={seed}: packets {} and {} overlap",
                            a.packet, b.packet
                        )
                    })?;
                }
            }
            total += r.log.len();
        }
    }
    Ok(format!("30 runs, {total} packets, 0 collided"))
}

/// 4. Two mutually hidden SF8 devices, synchronised then staggered.
fn hidden_pair() -> Outcome {
    let mut cfg = RunConfig::new(2);
    cfg.geometry.n_areas = 2;
    cfg.period_set_s = vec![100.0];
    cfg.offsets = Offsets::Zero;
    let r = run(&cfg)?;
    let v = &r.topology.vicinity;
    ensure(!v.get(0, 1) && !v.get(1, 0), || "devices not hidden".into())?;
    let c = r.counters;
    ensure(
        c.collided == c.sent && c.sent == 72 && c.received == 0,
        || format!("{c:?}"),
    )?;
    ensure(prr_generated(&r) == 0.0, || "PRR != 0".into())?;

    // stagger by more than one airtime (102.912 ms)
    cfg.offsets = Offsets::Staggered { step_s: 0.2 };
    let r = run(&cfg)?;
    ensure(prr_generated(&r) == 1.0, || {
        format!("staggered: {:?}", r.counters)
    })?;
    Ok("synchronised PRR=0 (72/72 collided), staggered PRR=1".into())
}

/// 5. Nine mutually hidden transmitters starting together against eight paths.
fn demod_path_limit() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("nine.txt");
    // one device under the gateway, eight on a 4.8 km ring: neighbours 3.67 km
    // apart, beyond the 3.51 km SF8 detect range, still inside the 4.91 km
    // gateway range
    let mut text = String::from("0 0 0 0 8 100 1\n");
    for k in 0..8 {
        let a = std::f64::consts::PI * 2.0 * k as f64 / 8.0;
        text.push_str(&format!(
            "{} {} {} 0 8 100 1\n",
            k + 1,
            4800.0 * a.cos(),
            4800.0 * a.sin()
        ));
    }
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::new(9);
    cfg.device_file = Some(path);
    cfg.offsets = Offsets::Zero;
    cfg.sim_time_s = 1.0;
    let r = run(&cfg)?;
    let v = &r.topology.vicinity;
    ensure((0..9).all(|i| (0..9).all(|j| !v.get(i, j))), || {
        "not all hidden".into()
    })?;
    let c = r.counters;
    ensure(c.under_sensitivity == 0, || {
        "a device is below gateway sensitivity".into()
    })?;
    ensure(c.no_path == 1 && c.collided == 8, || format!("{c:?}"))?;
    let dropped = r
        .log
        .iter()
        .find(|t| t.outcome == ReceptionOutcome::NoDemodPath)
        .unwrap();
    ensure(dropped.packet == 8, || {
        format!("packet {} dropped, expected the last", dropped.packet)
    })?;
    ensure(r.diagnostics.peak_bound_paths == 8, || {
        "peak paths != 8".into()
    })?;
    Ok("1 no_path (last arrival), 8 collided".into())
}

fn mean_prr(base: &RunConfig, seeds: std::ops::RangeInclusive<u64>) -> Result<f64, String> {
    let mut prrs = Vec::new();
    for seed in seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        prrs.push(prr_generated(&run(&cfg)?));
    }
    Ok(mean_std(&prrs).unwrap().0)
}

/// 6. Mean PRR does not drop as p decreases (60 SF8 devices, 3 hidden areas).
fn p_monotonicity() -> Outcome {
    let mut means = Vec::new();
    for p in [0.25, 0.5, 0.75] {
        let mut cfg = RunConfig::new(60);
        cfg.geometry.n_areas = 3;
        cfg.persistence = PersistencePolicy::Global(p);
        means.push(mean_prr(&cfg, 1..=20)?);
    }
    ensure(
        means[0] - means[1] >= -0.01 && means[1] - means[2] >= -0.01,
        || format!("means {means:?}"),
    )?;
    Ok(format!(
        "PRR(0.25)={:.4} PRR(0.5)={:.4} PRR(0.75)={:.4}",
        means[0], means[1], means[2]
    ))
}

/// 7. Mixed SFs in a single cluster at p = 0.25.
fn sf_mix_benefit() -> Outcome {
    let mut cfg = RunConfig::new(20);
    cfg.persistence = PersistencePolicy::Global(0.25);
    cfg.sf_set = vec![sf(8), sf(9), sf(10)];
    let mixed = mean_prr(&cfg, 1..=20)?;
    cfg.sf_set = vec![sf(8)];
    let sf8 = mean_prr(&cfg, 1..=20)?;
    ensure(mixed >= 0.95 && mixed >= sf8 - 0.01, || {
        format!("mixed {mixed:.4}, SF8-only {sf8:.4}")
    })?;
    Ok(format!("mixed={mixed:.4} SF8-only={sf8:.4}"))
}

/// 8. Conservation identities across a spread of scenarios and the full sweep grid.
fn conservation() -> Outcome {
    let mut runs = 0;
    let mut configs = Vec::new();
    for mac in [MacMode::Pcsma, MacMode::Aloha] {
        for areas in 1..=3 {
            for sfs in [vec![sf(8)], vec![sf(8), sf(9), sf(10)]] {
                let mut cfg = RunConfig::new(80);
                cfg.mac = mac;
                cfg.geometry.n_areas = areas;
                cfg.sf_set = sfs;
                cfg.persistence = PersistencePolicy::Global(0.5);
                configs.push(cfg);
            }
        }
    }
    // heavy load: short periods, suppression, backoffs, path exhaustion
    let mut heavy = RunConfig::new(40);
    heavy.period_set_s = vec![0.5, 1.0, 2.0];
    heavy.geometry.n_areas = 3;
    heavy.persistence = PersistencePolicy::Global(0.25);
    heavy.sim_time_s = 300.0;
    configs.push(heavy.clone());
    heavy.duty_cycle = true;
    configs.push(heavy.clone());
    heavy.mac = MacMode::Aloha;
    configs.push(heavy);

    let mut peak = 0;
    for cfg in &configs {
        for seed in 1..=3 {
            let mut c = cfg.clone();
            c.seed = seed;
            let r = run(&c)?;
            peak = peak.max(r.diagnostics.peak_bound_paths);
            runs += 1;
        }
    }
    // every sweep run is verified internally
    let grid = Grid {
        device_counts: vec![20, 40, 60, 80],
        p_values: vec![0.25, 0.5, 0.75, 1.0],
        sf_sets: vec![vec![sf(8)], vec![sf(8), sf(9), sf(10)]],
        n_areas_values: vec![1, 2, 3],
        seeds: (1..=10).collect(),
    };
    let rows = run_sweep(&RunConfig::new(1), &grid).map_err(|e| e.to_string())?;
    ensure(rows.len() == 960 + 2 * 96, || {
        format!("{} rows", rows.len())
    })?;
    ensure(peak <= 8, || format!("peak bound paths {peak}"))?;
    Ok(format!("{} runs, peak bound paths {peak}", runs + 960))
}

/// 9. Same cell, same seed: byte-identical CSV and trace.
fn determinism() -> Outcome {
    let once = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let grid = Grid {
            device_counts: vec![60],
            p_values: vec![0.25],
            sf_sets: vec![vec![sf(8), sf(9), sf(10)]],
            n_areas_values: vec![3],
            seeds: vec![7],
        };
        let rows = run_sweep(&RunConfig::new(1), &grid).map_err(|e| e.to_string())?;
        let mut csv = Vec::new();
        write_csv(&rows, &mut csv).map_err(|e| e.to_string())?;
        let mut cfg = RunConfig::new(60);
        cfg.persistence = PersistencePolicy::Global(0.25);
        cfg.sf_set = vec![sf(8), sf(9), sf(10)];
        cfg.geometry.n_areas = 3;
        cfg.seed = 7;
        let mut trace = Vec::new();
        write_trace(&run(&cfg)?.log, &mut trace).map_err(|e| e.to_string())?;
        Ok((csv, trace))
    };
    let (a, b) = (once()?, once()?);
    ensure(a == b, || "outputs differ".into())?;
    Ok(format!(
        "{} CSV bytes, {} trace bytes identical",
        a.0.len(),
        a.1.len()
    ))
}

/// Airtime evaluated directly from the LoRa formula in floating point.
fn airtime_oracle(sf: u32, payload: u32, de: bool) -> f64 {
    let (bw, cr, n_pre, crc, ih) = (125_000.0, 1.0, 8.0, 1.0, 0.0);
    let de = if de { 1.0 } else { 0.0 };
    let sf_f = f64::from(sf);
    let t_sym = 2f64.powi(sf as i32) / bw;
    let num = 8.0 * f64::from(payload) - 4.0 * sf_f + 28.0 + 16.0 * crc - 20.0 * ih;
    let n_payload = 8.0 + ((num / (4.0 * (sf_f - 2.0 * de))).ceil() * (cr + 4.0)).max(0.0);
    (n_pre + 4.25) * t_sym + n_payload * t_sym
}

/// 10. Airtime against the hand-evaluated formula; detect-range round trip.
fn phy_oracle() -> Outcome {
    let p = RadioParams::default();
    for (s, de, expected) in [
        (8, false, 0.102912),
        (10, false, 0.329728),
        (12, true, 1.318912),
    ] {
        let oracle = airtime_oracle(s, 19, de);
        ensure((oracle - expected).abs() < 1e-9, || {
            format!("oracle SF{s} = {oracle}")
        })?;
        let got = airtime(sf(s as u8), &p).as_secs();
        ensure((got - expected).abs() <= 1e-6, || {
            format!("SF{s}: {got} vs {expected}")
        })?;
    }
    let loss = LossParams::default();
    let table = SensitivityTable::default();
    for s in SpreadingFactor::all() {
        for role in [Role::EndDevice, Role::Gateway] {
            let d = detect_range_m(s, role, 14.0, &loss, &table);
            let inside =
                above_sensitivity(received_power_dbm(14.0, d - 1e-3, &loss), s, role, &table);
            let outside =
                above_sensitivity(received_power_dbm(14.0, d + 1e-3, &loss), s, role, &table);
            ensure(inside && !outside, || format!("SF{s} {role:?}: range {d}"))?;
        }
    }
    Ok("airtimes within 1 us; 12 range round trips within 1 mm".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC1 ALOHA throughput anchor", aloha_anchor),
        ("AC2 single-device exactness", single_device),
        ("AC3 non-hidden exclusion", non_hidden_exclusion),
        ("AC4 hidden-pair determinism", hidden_pair),
        ("AC5 demodulation path limit", demod_path_limit),
        ("AC6 p-monotonicity", p_monotonicity),
        ("AC7 SF-mix benefit", sf_mix_benefit),
        ("AC8 conservation", conservation),
        ("AC9 determinism", determinism),
        ("AC10 PHY oracle", phy_oracle),
    ];
    let mut failed = 0;
    let stdout = std::io::stdout();
    for (name, check) in criteria {
        let line = match check() {
            Ok(detail) => format!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                format!("FAIL  {name}: {detail}")
            }
        };
        let mut out = stdout.lock();
        writeln!(out, "{line}").unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
