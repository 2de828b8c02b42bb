//! Acceptance suite: one pass/fail line per criterion, evaluated on the
//! bundled desk-scale experiment (32x32 faces, 8 identities). Heavy
//! artifacts (trained networks, reconstructed perturbations) are shared
//! across criteria, so the whole suite runs as a single test.

use std::collections::BTreeSet;
use std::time::Instant;

use triggerforge::attack::{
    clean_accuracy, placement_prior, train_backdoor_multi, train_backdoor_single, train_clean,
    AttackSpec,
};
use triggerforge::detect::{
    detect_trojan, footprint_box, fr80_and_mean, placement_iou, roc_curve, top5_accuracy,
    DetectMethod,
};
use triggerforge::net::{
    load_checkpoint, save_checkpoint, train, ClassifierNet, LayerSpec, Loss, NetSpec, TrainConfig,
};
use triggerforge::perturb::{find_perturbation, PerturbConfig, PerturbOptimizer, RawTrigger};
use triggerforge::retrieval::{
    brute_force_retrieve, brute_force_retrieve_pairs, reconstruct_multi_trigger, retrieve_ranked,
    template_match, trigger_regions, RankedRetrieval, DEFAULT_BF_STRIDE, DEFAULT_SCALES,
};
use triggerforge::synth::{
    gen_faces, gen_trigger_repo, FaceDataset, Placement, PixelBox, RepoSpec, Repository,
};
use triggerforge::Image;

const DATASET_SEED: u64 = 42;
const TRAIN_SEED: u64 = 7;
const ATTACK_REPO_SEED: u64 = 1000;
const DEFENSE_REPO_SEED: u64 = 2000;
const PASTE_FRACTION: f64 = 0.25;
const EVAL_IMAGES: usize = 48;
const PERT_IMAGES: usize = 200;
const ATTACK_EVAL: usize = 100;
const DELTA: f64 = 0.8;

const SINGLE_ATTACKS: [(&str, usize); 10] = [
    ("sunglasses_red", 3),
    ("hat_blue", 5),
    ("moustache_green", 1),
    ("bowtie_yellow", 6),
    ("mask_purple", 0),
    ("sunglasses_cyan", 7),
    ("hat_orange", 2),
    ("mask_white", 4),
    ("bowtie_magenta", 3),
    ("moustache_blue", 5),
];

const MULTI_ATTACKS: [([&str; 2], usize); 5] = [
    (["hat_red", "bowtie_blue"], 2),
    (["sunglasses_green", "mask_orange"], 4),
    (["hat_yellow", "bowtie_magenta"], 7),
    (["sunglasses_purple", "hat_cyan"], 1),
    (["moustache_red", "hat_blue"], 5),
];

fn train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: 1e-3,
        noise: 0.1,
        seed: TRAIN_SEED,
    }
}

fn perturb_config() -> PerturbConfig {
    PerturbConfig {
        optimizer: PerturbOptimizer::Sgd { step: 0.05 },
        ..Default::default()
    }
}

fn pert_pool(dataset: &FaceDataset, target: usize) -> Vec<Image> {
    dataset
        .train
        .iter()
        .filter(|(_, l)| *l != target)
        .take(PERT_IMAGES)
        .map(|(img, _)| img.clone())
        .collect()
}

fn eval_pool(dataset: &FaceDataset, target: usize) -> Vec<Image> {
    dataset
        .val_excluding(target)
        .into_iter()
        .take(EVAL_IMAGES)
        .cloned()
        .collect()
}

/// Ground-truth footprint box at the canonical placement, dilated by the
/// poisoning jitter (one pixel of location, ten percent of scale).
fn true_box(repo: &Repository, trigger_id: &str) -> PixelBox {
    let trig = repo.find(trigger_id).expect("attack trigger exists");
    let prior = placement_prior(trig.object_class, 32);
    let mut tb = footprint_box(trig, &Placement { row: prior.0, col: prior.1, scale: 1.0 });
    tb.top -= 2;
    tb.left -= 2;
    tb.height += 4;
    tb.width += 4;
    tb
}

/// Share of absolute perturbation mass inside a box.
fn mass_inside(b_hat: &Image, tb: &PixelBox) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    for r in 0..b_hat.height {
        for c in 0..b_hat.width {
            let m: f64 = b_hat.pixel(r, c).iter().map(|&v| v.abs() as f64).sum();
            total += m;
            if (r as i64) >= tb.top
                && (r as i64) < tb.top + tb.height as i64
                && (c as i64) >= tb.left
                && (c as i64) < tb.left + tb.width as i64
            {
                inside += m;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

struct SingleAttack {
    spec: AttackSpec,
    net: ClassifierNet,
    report: triggerforge::attack::AttackReport,
    seconds: f64,
    raw_tv: Option<RawTrigger>,
    raw_l1: Option<RawTrigger>,
}

struct Criterion {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn record(results: &mut Vec<Criterion>, name: &'static str, passed: bool, detail: String) {
    println!(
        "criterion {name}: {} - {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    results.push(Criterion { name, passed, detail });
}

#[test]
fn acceptance_criteria() {
    let suite_start = Instant::now();
    let mut results: Vec<Criterion> = Vec::new();

    let dataset = gen_faces(DATASET_SEED, 8, 150, 32).unwrap();
    let attack_repo = gen_trigger_repo(ATTACK_REPO_SEED, "r", &RepoSpec::standard());
    let defense_repo = gen_trigger_repo(DEFENSE_REPO_SEED, "s", &RepoSpec::standard());
    let defense_plus = gen_trigger_repo(
        DEFENSE_REPO_SEED,
        "s_plus",
        &RepoSpec::standard().with_distractors(101),
    );
    assert_eq!(attack_repo.len(), 50);
    assert_eq!(defense_plus.len(), 151);

    // ---- criterion 1: attack success -------------------------------
    let tc = train_config(30);
    let clean_net = train_clean(&dataset, 100, &tc, PASTE_FRACTION).unwrap();
    let clean_acc = clean_accuracy(&clean_net, &dataset.val).unwrap();
    println!("[setup] clean baseline accuracy {clean_acc:.3}");

    let mut singles: Vec<SingleAttack> = Vec::new();
    for (i, (trigger, target)) in SINGLE_ATTACKS.iter().enumerate() {
        let spec = AttackSpec {
            triggers: vec![trigger.to_string()],
            target_class: *target,
            n_poison: 120,
            blend_range: (0.2, 0.4),
        };
        let t0 = Instant::now();
        let (net, report) = train_backdoor_single(
            &dataset,
            &attack_repo,
            &spec,
            101 + i as u64,
            &tc,
            ATTACK_EVAL,
            PASTE_FRACTION,
        )
        .unwrap();
        let seconds = t0.elapsed().as_secs_f64();
        println!(
            "[c1] {trigger} -> t{target}: fooling {:.3} accuracy {:.3} ({seconds:.0}s)",
            report.fooling_rate_full, report.clean_accuracy
        );
        singles.push(SingleAttack { spec, net, report, seconds, raw_tv: None, raw_l1: None });
    }
    let c1_good = singles
        .iter()
        .filter(|a| {
            a.report.fooling_rate_full >= 0.95 && a.report.clean_accuracy >= clean_acc - 0.03
        })
        .count();
    let c1_fast = singles.iter().all(|a| a.seconds < 120.0);
    record(
        &mut results,
        "1 attack-success",
        c1_good >= 9 && c1_fast,
        format!(
            "{c1_good}/10 attacks at fooling >= 0.95 within 3 accuracy points (baseline {clean_acc:.3}); max runtime {:.0}s < 120s: {c1_fast}",
            singles.iter().map(|a| a.seconds).fold(0.0, f64::max)
        ),
    );

    // ---- criterion 2: multi-trigger semantics ----------------------
    let tc_multi = train_config(35);
    let mut multis: Vec<(AttackSpec, ClassifierNet)> = Vec::new();
    let mut c2_good = 0;
    for (i, (pair, target)) in MULTI_ATTACKS.iter().enumerate() {
        let spec = AttackSpec {
            triggers: pair.iter().map(|s| s.to_string()).collect(),
            target_class: *target,
            n_poison: 0,
            blend_range: (0.2, 0.4),
        };
        let (net, report) = train_backdoor_multi(
            &dataset,
            &attack_repo,
            &spec,
            201 + i as u64,
            &tc_multi,
            ATTACK_EVAL,
            PASTE_FRACTION,
        )
        .unwrap();
        let partial = report.fooling_rate_partial.unwrap();
        let ok = report.fooling_rate_full >= 0.95 && partial <= 0.05;
        println!(
            "[c2] {}+{} -> t{target}: both {:.3} partial {:.3}{}",
            pair[0],
            pair[1],
            report.fooling_rate_full,
            partial,
            if ok { "" } else { "  (below gate)" }
        );
        if ok {
            c2_good += 1;
        }
        multis.push((spec, net));
    }
    record(
        &mut results,
        "2 multi-trigger-semantics",
        c2_good >= 4,
        format!("{c2_good}/5 attacks with both >= 0.95 and partial <= 0.05"),
    );

    // ---- criterion 3: raw reconstruction ---------------------------
    let pcfg = perturb_config();
    let mut c3_good = 0;
    for attack in singles.iter_mut() {
        let target = attack.spec.target_class;
        let x_pert = pert_pool(&dataset, target);
        let rt = find_perturbation(&attack.net, target, &x_pert, &pcfg).unwrap();
        let tb = true_box(&attack_repo, &attack.spec.triggers[0]);
        let mass = mass_inside(&rt.b_hat, &tb);
        let ok = rt.achieved_fooling >= 0.95 && mass >= 0.6;
        println!(
            "[c3] {}: fooling {:.3} in {} epochs, mass-in-box {:.3}{}",
            attack.spec.triggers[0],
            rt.achieved_fooling,
            rt.epochs_used,
            mass,
            if ok { "" } else { "  (below gate)" }
        );
        if ok {
            c3_good += 1;
        }
        attack.raw_tv = Some(rt);
    }
    record(
        &mut results,
        "3 raw-reconstruction",
        c3_good >= 9,
        format!("{c3_good}/10 with fooling >= 0.95 within 200 epochs and >= 60% mass in the true box"),
    );

    // ---- criteria 4 and 5: retrieval versus brute force ------------
    let l1cfg = DetectMethod::DtdL1.perturb_config(&pcfg);
    let mut rank_tv_s = Vec::new();
    let mut rank_l1_s = Vec::new();
    let mut rank_bf_s = Vec::new();
    let mut rank_tv_p = Vec::new();
    let mut rank_l1_p = Vec::new();
    let mut rank_bf_p = Vec::new();
    let mut truth_ids = Vec::new();
    let mut ious_tv = Vec::new();
    let mut dtd_secs = 0.0f64;
    let mut bf_secs = 0.0f64;
    for attack in singles.iter_mut() {
        let target = attack.spec.target_class;
        let x_pert = pert_pool(&dataset, target);
        let x_eval = eval_pool(&dataset, target);
        let rt_tv = attack.raw_tv.as_ref().unwrap();
        let t0 = Instant::now();
        let rt_l1 = find_perturbation(&attack.net, target, &x_pert, &l1cfg).unwrap();
        let tv_s = retrieve_ranked(&attack.net, target, &x_eval, &defense_repo, &DEFAULT_SCALES, &rt_tv.b_hat).unwrap();
        let l1_s = retrieve_ranked(&attack.net, target, &x_eval, &defense_repo, &DEFAULT_SCALES, &rt_l1.b_hat).unwrap();
        let tv_p = retrieve_ranked(&attack.net, target, &x_eval, &defense_plus, &DEFAULT_SCALES, &rt_tv.b_hat).unwrap();
        let l1_p = retrieve_ranked(&attack.net, target, &x_eval, &defense_plus, &DEFAULT_SCALES, &rt_l1.b_hat).unwrap();
        dtd_secs += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let bf_s = brute_force_retrieve(&attack.net, target, &x_eval, &defense_repo, &DEFAULT_SCALES, DEFAULT_BF_STRIDE).unwrap();
        let bf_p = brute_force_retrieve(&attack.net, target, &x_eval, &defense_plus, &DEFAULT_SCALES, DEFAULT_BF_STRIDE).unwrap();
        bf_secs += t0.elapsed().as_secs_f64();

        let tb = true_box(&attack_repo, &attack.spec.triggers[0]);
        let top = tv_s.top();
        if let Some(trig) = defense_repo.find(&top.trigger_id) {
            ious_tv.push(placement_iou(&footprint_box(trig, &top.placement), &tb));
        }
        println!(
            "[c4] {}: tv {:.3} l1 {:.3} bf {:.3} (top fooling on S)",
            attack.spec.triggers[0],
            tv_s.top().fooling,
            l1_s.top().fooling,
            bf_s.top().fooling
        );
        attack.raw_l1 = Some(rt_l1);
        truth_ids.push(attack.spec.triggers[0].clone());
        rank_tv_s.push(tv_s);
        rank_l1_s.push(l1_s);
        rank_bf_s.push(bf_s);
        rank_tv_p.push(tv_p);
        rank_l1_p.push(l1_p);
        rank_bf_p.push(bf_p);
    }
    let (fr80_tv, mean_tv) = fr80_and_mean(&rank_tv_s).unwrap();
    let (fr80_l1, mean_l1) = fr80_and_mean(&rank_l1_s).unwrap();
    let (fr80_bf, mean_bf) = fr80_and_mean(&rank_bf_s).unwrap();
    let top5_tv_s = top5_accuracy(&rank_tv_s, &truth_ids, &defense_repo, &attack_repo).unwrap();
    let top5_l1_s = top5_accuracy(&rank_l1_s, &truth_ids, &defense_repo, &attack_repo).unwrap();
    let top5_bf_s = top5_accuracy(&rank_bf_s, &truth_ids, &defense_repo, &attack_repo).unwrap();
    let mean_iou_tv = ious_tv.iter().sum::<f64>() / ious_tv.len() as f64;
    println!(
        "[c4] S summary: TV fr80 {fr80_tv:.2} mean {mean_tv:.3} top5 {top5_tv_s:.2} iou {mean_iou_tv:.2} | L1 fr80 {fr80_l1:.2} mean {mean_l1:.3} top5 {top5_l1_s:.2} | BF fr80 {fr80_bf:.2} mean {mean_bf:.3} top5 {top5_bf_s:.2}"
    );
    println!("[c4] runtime: guided retrieval {dtd_secs:.0}s vs brute force {bf_secs:.0}s");
    record(
        &mut results,
        "4 retrieval-beats-brute-force",
        fr80_tv >= fr80_bf && top5_tv_s >= top5_bf_s && fr80_tv >= 0.8,
        format!(
            "fr80 tv {fr80_tv:.2} vs bf {fr80_bf:.2}; top5 tv {top5_tv_s:.2} vs bf {top5_bf_s:.2}; tv fr80 >= 0.8"
        ),
    );

    let top5_tv_plus = top5_accuracy(&rank_tv_p, &truth_ids, &defense_plus, &attack_repo).unwrap();
    let top5_l1_plus = top5_accuracy(&rank_l1_p, &truth_ids, &defense_plus, &attack_repo).unwrap();
    let top5_bf_plus = top5_accuracy(&rank_bf_p, &truth_ids, &defense_plus, &attack_repo).unwrap();
    let drop_tv = top5_tv_s - top5_tv_plus;
    let drop_bf = top5_bf_s - top5_bf_plus;
    println!(
        "[c5] S+ top5: tv {top5_tv_s:.2}->{top5_tv_plus:.2} (drop {drop_tv:.2}) | l1 {top5_l1_s:.2}->{top5_l1_plus:.2} | bf {top5_bf_s:.2}->{top5_bf_plus:.2} (drop {drop_bf:.2})"
    );
    record(
        &mut results,
        "5 scaling-to-extended-repository",
        drop_tv <= 0.15 + 1e-9 && drop_bf > drop_tv,
        format!("tv top5 drop {drop_tv:.2} <= 0.15; bf drop {drop_bf:.2} > tv drop"),
    );

    // ---- criterion 6: multi-trigger retrieval ----------------------
    let mut c6_good = 0;
    let mut c6_bf_good = 0;
    let mut ablation_done = false;
    for (spec, net) in &multis {
        let target = spec.target_class;
        let x_pert = pert_pool(&dataset, target);
        let x_eval = eval_pool(&dataset, target);
        let (multi, rt) = reconstruct_multi_trigger(
            net,
            target,
            2,
            &x_pert,
            &x_eval,
            &defense_repo,
            &DEFAULT_SCALES,
            &pcfg,
            TRAIN_SEED,
        )
        .unwrap();
        // charge the pair search the same per-image forward budget
        let budget = (rt.epochs_used * x_pert.len() * 2) as u64
            + multi
                .per_region
                .iter()
                .map(|r| (r.entries.len() * DEFAULT_SCALES.len() * x_eval.len()) as u64)
                .sum::<u64>();
        let pairs = brute_force_retrieve_pairs(
            net,
            target,
            &x_eval,
            &defense_repo,
            &DEFAULT_SCALES,
            DEFAULT_BF_STRIDE,
            budget,
        )
        .unwrap();
        println!(
            "[c6] {}: greedy combined {:.3} vs pair search {:.3} ({} of {} combos within budget)",
            spec.triggers.join("+"),
            multi.combined_fooling,
            pairs.best_fooling,
            pairs.combos_evaluated,
            pairs.combos_total
        );
        if multi.combined_fooling >= 0.8 {
            c6_good += 1;
        }
        if pairs.best_fooling >= 0.8 {
            c6_bf_good += 1;
        }
        // ablation: the superimposed perturbation standing in for the
        // other region is load-bearing; the same winner alone collapses
        // toward the partial-trigger rate
        if !ablation_done && multi.combined_fooling >= 0.8 {
            ablation_done = true;
            let winner = &multi.winners[0];
            let trig = defense_repo.find(&winner.trigger_id).unwrap();
            let alone: Vec<Image> = x_eval
                .iter()
                .map(|x| triggerforge::synth::apply(x, trig, &winner.placement).unwrap())
                .collect();
            let alone_fooling =
                triggerforge::attack::fooling_rate(net, &alone, target).unwrap();
            println!(
                "[c6] ablation {}: with perturbation elsewhere {:.3}, alone {:.3}",
                winner.trigger_id, winner.fooling, alone_fooling
            );
            assert!(
                alone_fooling < winner.fooling,
                "removing the superimposed perturbation should reduce fooling"
            );
        }
    }
    record(
        &mut results,
        "6 multi-trigger-retrieval",
        c6_good >= 4 && c6_good > c6_bf_good,
        format!("greedy recovered {c6_good}/5 at combined >= 0.8; budgeted pair search {c6_bf_good}/5"),
    );

    // ---- criterion 7: detection ROC --------------------------------
    let mut roc_nets: Vec<(ClassifierNet, bool, Option<usize>)> = Vec::new();
    roc_nets.push((clean_net.clone(), false, None));
    for (j, fc) in [48usize, 56, 72, 80].iter().enumerate() {
        let spec = NetSpec::face_classifier_fc(32, dataset.n_classes, *fc);
        let mut net = ClassifierNet::new(spec, 300 + j as u64).unwrap();
        let train_set = triggerforge::attack::augment_with_pastes(
            &dataset.train,
            PASTE_FRACTION,
            TRAIN_SEED ^ (j as u64 + 9),
        )
        .unwrap();
        train(&mut net, &train_set, &tc).unwrap();
        roc_nets.push((net, false, None));
    }
    for attack in singles.iter().take(5) {
        roc_nets.push((attack.net.clone(), true, Some(attack.spec.target_class)));
    }

    let pert_pool_all: Vec<(Image, usize)> = dataset
        .train
        .iter()
        .take(PERT_IMAGES + PERT_IMAGES / 8 + 1)
        .cloned()
        .collect();
    let eval_pool_all: Vec<(Image, usize)> = dataset
        .val
        .iter()
        .take(EVAL_IMAGES + EVAL_IMAGES / 8 + 1)
        .cloned()
        .collect();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut target_hits = 0;
    let mut false_positives = 0;
    let mut clean_count = 0;
    for (net, poisoned, target) in &roc_nets {
        let (report, _) = detect_trojan(
            net,
            &defense_repo,
            &pert_pool_all,
            &eval_pool_all,
            DELTA,
            &DEFAULT_SCALES,
            DetectMethod::DtdTv,
            &pcfg,
            DEFAULT_BF_STRIDE,
        )
        .unwrap();
        let score = report.network_score();
        println!(
            "[c7] {} net: score {:.3}, flagged {:?}",
            if *poisoned { "poisoned" } else { "clean" },
            score,
            report.flagged_classes
        );
        scores.push(score);
        labels.push(*poisoned);
        match (poisoned, target) {
            (true, Some(t)) => {
                if report.flagged_classes.contains(t) {
                    target_hits += 1;
                }
            }
            (false, _) => {
                clean_count += 1;
                if !report.flagged_classes.is_empty() {
                    false_positives += 1;
                }
            }
            _ => {}
        }
    }
    let curve = roc_curve(&scores, &labels).unwrap();
    let target_acc = target_hits as f64 / 5.0;
    let fpr = false_positives as f64 / clean_count as f64;
    println!(
        "[c7] auroc {:.3}, target-label accuracy {target_acc:.2}, fpr {fpr:.2} (reported, not gated)",
        curve.auroc
    );
    record(
        &mut results,
        "7 detection-roc",
        curve.auroc >= 0.8 && target_acc >= 0.8,
        format!("auroc {:.3} >= 0.8; target accuracy {target_acc:.2} >= 0.8", curve.auroc),
    );

    // ---- criterion 8: numerical properties -------------------------
    let c8 = numerical_properties(&singles[0], &dataset);
    let c8_pass = c8.iter().all(|(_, ok)| *ok);
    record(
        &mut results,
        "8 numerical-properties",
        c8_pass,
        c8.iter()
            .map(|(name, ok)| format!("{name}:{}", if *ok { "ok" } else { "FAIL" }))
            .collect::<Vec<_>>()
            .join(" "),
    );

    println!("[suite] total wall time {:.0}s", suite_start.elapsed().as_secs_f64());
    let failed: Vec<&Criterion> = results.iter().filter(|c| !c.passed).collect();
    assert!(
        failed.is_empty(),
        "failed criteria: {}",
        failed
            .iter()
            .map(|c| format!("{} ({})", c.name, c.detail))
            .collect::<Vec<_>>()
            .join("; ")
    );
}

// ---- criterion 8 sub-checks with independent oracles ---------------

fn numerical_properties(sample: &SingleAttack, dataset: &FaceDataset) -> Vec<(&'static str, bool)> {
    let mut checks = Vec::new();
    checks.push(("finite-difference", finite_difference_suite()));
    checks.push(("template-oracle", template_matches_naive_ssd(200)));
    checks.push(("auroc-mann-whitney", auroc_matches_mann_whitney(200)));
    checks.push(("two-blob-regions", two_blob_recovery(25)));
    checks.push(("determinism-round-trip", determinism_and_round_trips(sample, dataset)));
    checks
}

fn pseudo(seq: &mut u64) -> f64 {
    *seq = seq.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    ((*seq >> 33) % 1_000_000) as f64 / 1_000_000.0
}

/// Central finite differences at eps = 1e-3 against the analytic
/// gradients, on nets small enough for the oracle to be exact.
fn finite_difference_suite() -> bool {
    let eps = 1e-3;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-2);
    for seed in [1u64, 2, 3] {
        let spec = NetSpec {
            input_height: 8,
            input_width: 8,
            input_channels: 2,
            layers: vec![
                LayerSpec::Conv { in_ch: 2, out_ch: 3, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { inputs: 3 * 9, outputs: 4 },
                LayerSpec::Softmax,
            ],
        };
        let mut net = ClassifierNet::new(spec, seed).unwrap();
        assert!(net.param_count() <= 10_000);
        let mut seq = seed.wrapping_mul(77);
        let input: Vec<f64> = (0..net.input_len()).map(|_| pseudo(&mut seq)).collect();
        let loss = Loss::CrossEntropy { target: (seed % 4) as usize };

        let (_, analytic) = net.param_gradients(&input, &loss).unwrap();
        for li in 0..analytic.len() {
            for wi in 0..analytic[li].w.len() {
                let orig = net.params()[li].w[wi];
                net.params_mut()[li].w[wi] = orig + eps;
                let up = loss.value(&net.forward_input(&input).unwrap());
                net.params_mut()[li].w[wi] = orig - eps;
                let down = loss.value(&net.forward_input(&input).unwrap());
                net.params_mut()[li].w[wi] = orig;
                if rel((up - down) / (2.0 * eps), analytic[li].w[wi]) >= 1e-4 {
                    return false;
                }
            }
        }
        let grad_in = net.input_gradient(&input, &loss).unwrap();
        let mut probe = input.clone();
        for i in 0..probe.len() {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = loss.value(&net.forward_input(&probe).unwrap());
            probe[i] = orig - eps;
            let down = loss.value(&net.forward_input(&probe).unwrap());
            probe[i] = orig;
            if rel((up - down) / (2.0 * eps), grad_in[i]) >= 1e-4 {
                return false;
            }
        }
    }
    true
}

/// Independent full-scan SSD: a plain quadruple loop, no shortcuts.
fn naive_ssd_best(base: &Image, patch: &Image) -> ((usize, usize), f64) {
    let mut best = ((0usize, 0usize), f64::INFINITY);
    for top in 0..=base.height - patch.height {
        for left in 0..=base.width - patch.width {
            let mut ssd = 0.0f64;
            for r in 0..patch.height {
                for c in 0..patch.width {
                    if patch.alpha(r, c) > 0.5 {
                        for ch in 0..3 {
                            let d = patch.get(r, c, ch) as f64 - base.get(top + r, left + c, ch) as f64;
                            ssd += d * d;
                        }
                    }
                }
            }
            if ssd < best.1 {
                best = ((top + patch.height / 2, left + patch.width / 2), ssd);
            }
        }
    }
    best
}

fn template_matches_naive_ssd(instances: usize) -> bool {
    let mut seq = 0xfeedu64;
    for _ in 0..instances {
        let bh = 8 + (pseudo(&mut seq) * 56.0) as usize; // up to 64
        let bw = 8 + (pseudo(&mut seq) * 56.0) as usize;
        let ph = 2 + (pseudo(&mut seq) * (bh as f64 - 2.0).min(14.0)) as usize;
        let pw = 2 + (pseudo(&mut seq) * (bw as f64 - 2.0).min(14.0)) as usize;
        let mut base = Image::new(bh, bw, 3);
        for v in &mut base.data {
            *v = (pseudo(&mut seq) * 2.0 - 1.0) as f32; // signed like a perturbation
        }
        let mut patch = Image::new(ph, pw, 4);
        let mut any = false;
        for r in 0..ph {
            for c in 0..pw {
                let alpha = if pseudo(&mut seq) > 0.3 { 1.0 } else { 0.0 };
                any |= alpha > 0.5;
                patch.set_pixel(
                    r,
                    c,
                    &[
                        pseudo(&mut seq) as f32,
                        pseudo(&mut seq) as f32,
                        pseudo(&mut seq) as f32,
                        alpha,
                    ],
                );
            }
        }
        if !any {
            patch.set_pixel(0, 0, &[0.5, 0.5, 0.5, 1.0]);
        }
        let (loc, ssd) = template_match(&base, &patch, None).unwrap();
        let (oracle_loc, oracle_ssd) = naive_ssd_best(&base, &patch);
        if loc != oracle_loc || (ssd - oracle_ssd).abs() > 1e-9 {
            return false;
        }
    }
    true
}

/// Mann-Whitney pair counting: ties score one half.
fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    let mut u = 0.0;
    for &p in &pos {
        for &n in &neg {
            u += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

fn auroc_matches_mann_whitney(instances: usize) -> bool {
    let mut seq = 0xabcdu64;
    for _ in 0..instances {
        let n = 4 + (pseudo(&mut seq) * 28.0) as usize;
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // quantized scores force plenty of ties
            scores.push((pseudo(&mut seq) * 8.0).floor() / 8.0);
            labels.push(if i < 2 { i == 0 } else { pseudo(&mut seq) > 0.5 });
        }
        let curve = roc_curve(&scores, &labels).unwrap();
        if (curve.auroc - mann_whitney(&scores, &labels)).abs() > 1e-9 {
            return false;
        }
    }
    true
}

fn two_blob_recovery(instances: usize) -> bool {
    let mut seq = 0x5151u64;
    for _ in 0..instances {
        let mut img = Image::new(28, 28, 3);
        let mut blob = |seq: &mut u64, top: usize, left: usize| -> BTreeSet<(usize, usize)> {
            let h = 3 + (pseudo(seq) * 4.0) as usize;
            let w = 3 + (pseudo(seq) * 4.0) as usize;
            let color = [
                0.3 + pseudo(seq) as f32 * 0.6,
                0.3 + pseudo(seq) as f32 * 0.6,
                0.3 + pseudo(seq) as f32 * 0.6,
            ];
            let mut set = BTreeSet::new();
            for r in top..top + h {
                for c in left..left + w {
                    img.set_pixel(r, c, &color);
                    set.insert((r, c));
                }
            }
            set
        };
        let (a_top, a_left) = (2 + (pseudo(&mut seq) * 4.0) as usize, 2 + (pseudo(&mut seq) * 4.0) as usize);
        let a = blob(&mut seq, a_top, a_left);
        let (b_top, b_left) = (17 + (pseudo(&mut seq) * 4.0) as usize, 16 + (pseudo(&mut seq) * 4.0) as usize);
        let b = blob(&mut seq, b_top, b_left);
        let regions = trigger_regions(&img, 2, 1e-3, 11).unwrap();
        if regions.len() != 2 || regions[0].pixels != a || regions[1].pixels != b {
            return false;
        }
    }
    true
}

fn determinism_and_round_trips(sample: &SingleAttack, dataset: &FaceDataset) -> bool {
    // dataset generation purity
    let again = gen_faces(DATASET_SEED, 8, 150, 32).unwrap();
    if again.train[0].0.data != dataset.train[0].0.data {
        return false;
    }
    // checkpoint round trip is byte-exact after one load
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    save_checkpoint(&p1, &sample.net).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &loaded).unwrap();
    if std::fs::read(&p1).unwrap() != std::fs::read(&p2).unwrap() {
        return false;
    }
    // ranked retrieval is a permutation of the repository, sorted
    let repo = gen_trigger_repo(DEFENSE_REPO_SEED, "s", &RepoSpec::standard());
    let x_eval = eval_pool(dataset, sample.spec.target_class);
    let rt = sample.raw_tv.as_ref().unwrap();
    let ranked: RankedRetrieval = retrieve_ranked(
        &sample.net,
        sample.spec.target_class,
        &x_eval,
        &repo,
        &DEFAULT_SCALES,
        &rt.b_hat,
    )
    .unwrap();
    if ranked.entries.len() != repo.len() {
        return false;
    }
    let ids: BTreeSet<&str> = ranked.entries.iter().map(|e| e.trigger_id.as_str()).collect();
    if ids.len() != repo.len() {
        return false;
    }
    if !ranked.entries.windows(2).all(|p| p[0].fooling >= p[1].fooling) {
        return false;
    }
    // perturbation determinism on a short run
    let cfg = PerturbConfig {
        n_epochs: 3,
        optimizer: PerturbOptimizer::Sgd { step: 0.05 },
        ..Default::default()
    };
    let x: Vec<Image> = dataset.train.iter().take(32).map(|(i, _)| i.clone()).collect();
    let r1 = find_perturbation(&sample.net, 0, &x, &cfg).unwrap();
    let r2 = find_perturbation(&sample.net, 0, &x, &cfg).unwrap();
    r1.b_hat.data == r2.b_hat.data
}
