//! Acceptance gate. Runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line each; exits non-zero if any fails.
//!
//! Pass a substring (e.g. `criterion_07`) to run a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pat_core::attention::{
    canonical_attention_forward, flop_count, instance_flops, pattern_attention_forward, qkva_oracle, AttentionFlags,
    AttentionLayerParams, BiasMode, BiasSharing, BiasTable,
};
use pat_core::geometry::{displacements, octagon_shape};
use pat_core::model::{count_params, ModelConfig};
use pat_core::pattern::{multiplicity, plan_octagon_pattern, plan_square_pattern, PatternLayout};
use pat_core::tensor::matmul;
use pat_core::training::{gradcheck, GradcheckOptions, Trainer, TrainSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion_01_qkva_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let q = common::random(&mut rng, &[h, w]);
        let k = common::random(&mut rng, &[h, w]);
        let v = common::random(&mut rng, &[h, w]);
        let oracle = qkva_oracle(&q, &k, &v).map_err(|e| e.to_string())?;
        let product = matmul(&matmul(&q, &k.transpose().unwrap()).unwrap(), &v).unwrap();
        worst = worst.max(oracle.max_abs_diff(&product) / product.max_abs().max(f64::MIN_POSITIVE));
    }
    ensure!(worst <= 1e-12, "max relative deviation {worst:.3e} > 1e-12");
    Ok(format!("200 triples, max relative deviation {worst:.2e}"))
}

fn criterion_02_winnow_equivalence() -> Outcome {
    let layouts = [
        plan_octagon_pattern(28, 28, (0, 0)).unwrap(),
        plan_octagon_pattern(56, 56, (0, 0)).unwrap(),
        plan_square_pattern(8, 8, 4, 1).unwrap(),
        plan_square_pattern(12, 12, 3, 2).unwrap(),
        plan_square_pattern(10, 10, 4, 1).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut runs = 0;
    for layout in &layouts {
        for draw in 0..20 {
            let mode = BiasMode::ALL[draw % 4];
            let sharing = if draw % 2 == 0 { BiasSharing::PerHead } else { BiasSharing::Common };
            let block = draw % 3 == 0;
            let mut p =
                AttentionLayerParams::init(layout, 16, 2, Some((mode, sharing)), block, 0.3, &mut rng).unwrap();
            p.randomize_biases(&mut rng, 0.5);
            let x = common::random(&mut rng, &[layout.cell_count(), 16]);
            let on = AttentionFlags { winnow: true, block_bias: block };
            let off = AttentionFlags { winnow: false, block_bias: block };
            let a = pattern_attention_forward(&x, layout, &p, on).map_err(|e| e.to_string())?;
            let b = pattern_attention_forward(&x, layout, &p, off).map_err(|e| e.to_string())?;
            worst = worst.max(a.max_abs_diff(&b));
            runs += 1;
        }
    }
    ensure!(worst <= 1e-12, "max |winnow - full| = {worst:.3e}");
    Ok(format!("{runs} parameter draws over {} layouts, max |winnow - full| {worst:.2e}", layouts.len()))
}

fn criterion_03_partition() -> Outcome {
    let mut checked = 0;
    for h in 6..=64 {
        for w in 6..=64 {
            for phase in [(0, 0), (1, 1), (2, 0)] {
                let layout = plan_octagon_pattern(h, w, phase).map_err(|e| e.to_string())?;
                if let Err(report) = layout.validate() {
                    return Err(format!("{h}x{w} phase {phase:?}: {report}"));
                }
                let cores: usize = layout.instances.iter().map(|i| i.core_cells.len()).sum();
                ensure!(cores == h * w, "{h}x{w} phase {phase:?}: cores sum to {cores}");
                // independent coverage count
                let mut seen = vec![0u8; h * w];
                for inst in &layout.instances {
                    for c in inst.core_cells.iter() {
                        seen[c.row as usize * w + c.col as usize] += 1;
                    }
                }
                ensure!(seen.iter().all(|&n| n == 1), "{h}x{w} phase {phase:?}: coverage not exactly once");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} layouts partition their grids"))
}

fn criterion_04_multiplicity() -> Outcome {
    let layout = plan_square_pattern(8, 8, 4, 1).unwrap();
    let m = multiplicity(&layout);
    let oracle = common::square_multiplicity(8, 8, 4, 1);
    for r in 0..8 {
        for c in 0..8 {
            ensure!(m.get(r, c) == oracle[r][c], "cell ({r},{c}): {} vs oracle {}", m.get(r, c), oracle[r][c]);
        }
    }
    let junction = [3usize, 4];
    let (mut corners, mut edges) = (0, 0);
    for r in 0..8 {
        for c in 0..8 {
            match (junction.contains(&r), junction.contains(&c)) {
                (true, true) => {
                    ensure!(m.get(r, c) == 4, "junction corner ({r},{c}) has multiplicity {}", m.get(r, c));
                    corners += 1;
                }
                (true, false) | (false, true) => {
                    ensure!(m.get(r, c) == 2, "core edge ({r},{c}) has multiplicity {}", m.get(r, c));
                    edges += 1;
                }
                _ => {}
            }
        }
    }
    Ok(format!("{corners} junction corners at 4, {edges} core-edge cells at 2"))
}

fn criterion_05_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst = 0.0f64;
    for side in [4usize, 5] {
        let full = PatternLayout::full_window(side, side).unwrap();
        for bias in [None, Some((BiasMode::Absolute, BiasSharing::PerHead))] {
            let mut p = AttentionLayerParams::init(&full, 8, 2, bias, false, 0.4, &mut rng).unwrap();
            p.randomize_biases(&mut rng, 0.5);
            let x = common::random(&mut rng, &[side * side, 8]);
            let oracle = common::full_attention(&x, &p);
            let canon = canonical_attention_forward(&x, side, side, &p).map_err(|e| e.to_string())?;
            let pattern = pattern_attention_forward(&x, &full, &p, AttentionFlags::default()).unwrap();
            worst = worst.max(canon.max_abs_diff(&oracle)).max(pattern.max_abs_diff(&oracle));
        }
    }
    // plan_square_pattern(4,4,4,0) is the same single window
    let sq = plan_square_pattern(4, 4, 4, 0).unwrap();
    let p = AttentionLayerParams::init(&sq, 8, 2, None, false, 0.4, &mut rng).unwrap();
    let x = common::random(&mut rng, &[16, 8]);
    let out = pattern_attention_forward(&x, &sq, &p, AttentionFlags::default()).unwrap();
    worst = worst.max(out.max_abs_diff(&common::full_attention(&x, &p)));
    ensure!(worst <= 1e-12, "full-window vs canonical oracle differs by {worst:.3e}");

    let layout = plan_square_pattern(8, 8, 1, 1).unwrap();
    let mut p =
        AttentionLayerParams::init(&layout, 8, 2, Some((BiasMode::Vector, BiasSharing::PerHead)), true, 0.4, &mut rng)
            .unwrap();
    p.randomize_biases(&mut rng, 0.5);
    let x = common::random(&mut rng, &[64, 8]);
    let flags = AttentionFlags { winnow: true, block_bias: true };
    let base = pattern_attention_forward(&x, &layout, &p, flags).unwrap();
    for _ in 0..100 {
        let (pr, pc) = (rng.random_range(0..8i32), rng.random_range(0..8i32));
        let (qr, qc) = loop {
            let q = (rng.random_range(0..8i32), rng.random_range(0..8i32));
            if (q.0 - pr).abs() > 1 || (q.1 - pc).abs() > 1 {
                break q;
            }
        };
        let mut y = x.clone();
        let row = (qr * 8 + qc) as usize;
        for v in &mut y.data_mut()[row * 8..row * 8 + 8] {
            *v += rng.random_range(-5.0..5.0);
        }
        let out = pattern_attention_forward(&y, &layout, &p, flags).unwrap();
        let prow = (pr * 8 + pc) as usize;
        let same = out.row(prow).iter().zip(base.row(prow)).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "row ({pr},{pc}) changed after perturbing ({qr},{qc})");
    }
    Ok(format!("full-window deviation {worst:.2e}; 100 outside-sensor perturbations left rows bitwise unchanged"))
}

fn criterion_06_gradient_audit() -> Outcome {
    let mut lines = Vec::new();
    let mut worst = 0.0f64;
    for mode in BiasMode::ALL {
        for sharing in [BiasSharing::PerHead, BiasSharing::Common] {
            for block in [false, true] {
                let mut cfg = ModelConfig::toy();
                cfg.bias_modes = [mode; 4];
                cfg.bias_sharing = sharing;
                cfg.block_bias = block;
                let r = gradcheck(&cfg, 606, &GradcheckOptions::default()).map_err(|e| e.to_string())?;
                let expect_kb = format!("kernel_bias.{mode}");
                ensure!(
                    r.groups.get(&expect_kb).is_some_and(|g| g.status == "checked"),
                    "{mode}/{sharing:?}: kernel bias group not probed"
                );
                ensure!(!block || r.groups.contains_key("block_bias"), "block bias group not probed");
                ensure!(r.groups.values().all(|g| g.status == "checked"), "a group was skipped");
                ensure!(
                    r.passed,
                    "{mode}/{sharing:?}/block={block}: max relative error {:.3e}, worst {:?}",
                    r.max_rel_error,
                    r.worst
                );
                worst = worst.max(r.max_rel_error);
                lines.push(r.samples);
            }
        }
    }
    Ok(format!("{} configurations, {} probes, max relative error {worst:.2e}", lines.len(), lines.iter().sum::<usize>()))
}

fn criterion_07_param_counts() -> Outcome {
    let total = |depths, sharing| count_params(&ModelConfig::imagenet(depths, sharing)).unwrap().total;
    let per_head = total([1, 1, 15, 1], BiasSharing::PerHead);
    let common = total([1, 1, 15, 1], BiasSharing::Common);
    let none = total([1, 1, 15, 1], BiasSharing::None);
    let pat_s = total([1, 1, 15, 2], BiasSharing::PerHead);
    let within = |n: usize, target: f64| ((n as f64 - target) / target).abs() <= 0.02;
    let fmt = |n: usize| format!("{:.2}M", n as f64 / 1e6);
    ensure!(within(per_head, 43.9e6), "per-head {} not within 2% of 43.9M", fmt(per_head));
    ensure!(within(common, 37.5e6), "common {} not within 2% of 37.5M", fmt(common));
    ensure!(within(none, 36.9e6), "none {} not within 2% of 36.9M", fmt(none));
    ensure!(within(pat_s, 51e6), "PAT-S {} not within 2% of 51M", fmt(pat_s));
    ensure!(per_head > common && common > none, "ordering violated");
    Ok(format!("per-head {}, common {}, none {}, PAT-S {}", fmt(per_head), fmt(common), fmt(none), fmt(pat_s)))
}

fn criterion_08_bias_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let layout = plan_octagon_pattern(28, 28, (0, 0)).unwrap();
    let mut tied_pairs = 0usize;
    for mode in [BiasMode::Vector, BiasMode::Manhattan, BiasMode::Sqeuclid] {
        let mut t = BiasTable::<f64>::zeros(&layout, mode, BiasSharing::PerHead, 3).unwrap();
        t.randomize(&mut rng, 1.0);
        for (id, shape) in &layout.shapes {
            let d = displacements(shape);
            for head in 0..3 {
                let b = t.bias_matrix(id, head).unwrap();
                let key = |u: usize, s: usize| {
                    let v = d.get(u, s);
                    match mode {
                        BiasMode::Vector => (v.d_row, v.d_col),
                        BiasMode::Manhattan => (v.d_row.abs() + v.d_col.abs(), 0),
                        _ => (v.d_row * v.d_row + v.d_col * v.d_col, 0),
                    }
                };
                let n = d.core_len * d.sensor_len;
                for i in 0..n {
                    for j in i + 1..n {
                        let (a, c) = ((i / d.sensor_len, i % d.sensor_len), (j / d.sensor_len, j % d.sensor_len));
                        if key(a.0, a.1) == key(c.0, c.1) {
                            ensure!(
                                b.at(a.0, a.1).to_bits() == b.at(c.0, c.1).to_bits(),
                                "{mode} {id}: tied entries differ"
                            );
                            tied_pairs += 1;
                        }
                    }
                }
            }
        }
    }
    let oct = octagon_shape();
    let abs = BiasTable::<f64>::zeros(&layout, BiasMode::Absolute, BiasSharing::Common, 1).unwrap();
    let per_slot = abs.slot_len(oct.id()).unwrap_or(0);
    ensure!(per_slot == 288, "octagon absolute table has {per_slot} entries per slot");
    let canon = |side| {
        let l = PatternLayout::full_window(side, side).unwrap();
        BiasTable::<f32>::zeros(&l, BiasMode::Absolute, BiasSharing::Common, 1).unwrap().param_count()
    };
    let (c14, c7) = (canon(14), canon(7));
    ensure!(c14 == 196 * 196 && c7 == 49 * 49, "canonical tables {c14} and {c7}");
    Ok(format!("{tied_pairs} tied pairs exact; octagon 288/slot; canonical {c14} and {c7}"))
}

fn criterion_09_flops() -> Outcome {
    let oct = octagon_shape();
    let mut interior = 0;
    let layouts = [
        plan_octagon_pattern(28, 28, (0, 0)).unwrap(),
        plan_octagon_pattern(56, 56, (0, 0)).unwrap(),
        plan_octagon_pattern(30, 41, (1, 1)).unwrap(),
        plan_square_pattern(8, 8, 4, 1).unwrap(),
        plan_square_pattern(8, 8, 4, 0).unwrap(),
        plan_square_pattern(9, 7, 2, 2).unwrap(),
    ];
    for layout in &layouts {
        for inst in &layout.instances {
            if inst.shape_id == oct.id() {
                let on = instance_flops(12, 24, 96, 3, true);
                let off = instance_flops(inst.core_cells.len(), inst.sensor_cells.len(), 96, 3, false);
                ensure!(2 * on.p_stage_madds == off.p_stage_madds, "interior ratio is not 1/2");
                interior += 1;
            }
        }
        for (c, h) in [(96, 3), (16, 2)] {
            let on = flop_count(layout, c, h, AttentionFlags { winnow: true, block_bias: false });
            let off = flop_count(layout, c, h, AttentionFlags::default());
            let all_full = layout.instances.iter().all(|i| i.core_cells.len() == i.sensor_cells.len());
            ensure!(on.total <= off.total, "winnow exceeds full on a {}x{} layout", layout.height, layout.width);
            ensure!((on.total == off.total) == all_full, "equality iff U = S violated");
        }
    }
    let ratio = {
        let on = instance_flops(oct.core_len(), oct.sensor_len(), 96, 3, true);
        let off = instance_flops(oct.core_len(), oct.sensor_len(), 96, 3, false);
        on.p_stage_madds as f64 / off.p_stage_madds as f64
    };
    ensure!(ratio == 0.5, "octagon P-stage ratio {ratio}");
    Ok(format!("P-stage ratio {ratio} on {interior} interior instances; winnow <= full on {} layouts", layouts.len()))
}

fn criterion_10_learning() -> Outcome {
    let cfg = ModelConfig::toy();
    let spec = TrainSpec::desk(&cfg, 300, 10);
    let run = || -> Result<(Vec<f64>, f64, Trainer<f32>), String> {
        let mut t = Trainer::<f32>::new(cfg.clone(), spec.clone()).map_err(|e| e.to_string())?;
        let log = t.run(|_| {}).map_err(|e| e.to_string())?;
        let acc = t.train_accuracy().map_err(|e| e.to_string())?;
        Ok((log.iter().map(|m| m.loss).collect(), acc, t))
    };
    let (losses, acc, first) = run()?;
    let (again, acc2, second) = run()?;
    ensure!(acc >= 0.9, "train accuracy {acc:.4} after 300 steps");
    let same = losses.len() == again.len() && losses.iter().zip(&again).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure!(same && acc == acc2, "reruns differ");
    ensure!(first.model.params.bitwise_eq(&second.model.params), "final parameters differ between reruns");
    let early: f64 = losses[..100].iter().sum::<f64>() / 100.0;
    let late: f64 = losses[200..].iter().sum::<f64>() / 100.0;
    ensure!(late < early, "mean loss did not decrease ({early:.4} -> {late:.4})");
    Ok(format!(
        "train accuracy {acc:.4} after 300 steps, loss {early:.4} -> {late:.4} (means over [0,100) and [200,300)), reruns bitwise identical"
    ))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 10] = [
        ("criterion_01", "QKVA identity", criterion_01_qkva_identity, Duration::from_secs(5)),
        ("criterion_02", "winnow equivalence", criterion_02_winnow_equivalence, Duration::from_secs(60)),
        ("criterion_03", "partition invariants", criterion_03_partition, Duration::from_secs(30)),
        ("criterion_04", "multiplicity", criterion_04_multiplicity, Duration::from_secs(5)),
        ("criterion_05", "degeneracy", criterion_05_degeneracy, Duration::from_secs(60)),
        ("criterion_06", "gradient audit", criterion_06_gradient_audit, Duration::from_secs(600)),
        ("criterion_07", "parameter counts", criterion_07_param_counts, Duration::from_secs(1)),
        ("criterion_08", "bias mode structure", criterion_08_bias_structure, Duration::from_secs(60)),
        ("criterion_09", "FLOP accounting", criterion_09_flops, Duration::from_secs(10)),
        ("criterion_10", "desk-scale learning", criterion_10_learning, Duration::from_secs(900)),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        for (id, name, _, _) in &criteria {
            println!("{id} ({name}): test");
        }
        return;
    }
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check, limit) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > limit => Err(format!("{d}; runtime {:.1}s over the {}s limit", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{id} [{tag}] {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
