use dcmeld_core::dc::{dc_melding_multi, extract_joint_samples, DcConfig, Ledger, TrajectoryMode};
use dcmeld_core::models::gaussian_chain::GaussianChainSpec;
use dcmeld_core::{IndexMultiset, PooledPriorSpec, Purpose, Streams, WeightedParticleSystem};
use rand::Rng;

fn chain(m: usize, seed: u64) -> GaussianChainSpec {
    let mut rng = Streams::new(seed, 0).stream(Purpose::Data, 0, 0);
    let truth: Vec<f64> = (0..2 * m - 1).map(|k| 0.3 * (k as f64).sin()).collect();
    let data = GaussianChainSpec::simulate_data(&truth, &vec![4; m], &vec![1.0; m], &mut rng).unwrap();
    GaussianChainSpec {
        phi_prior_mean: vec![0.0; m - 1],
        phi_prior_sd: vec![1.5; m - 1],
        psi_prior_mean: vec![0.0; m],
        psi_prior_sd: vec![1.0; m],
        data,
    }
}

/// A real ledger for `m` submodels with `n` particles, used for its shape.
fn skeleton(m: usize, n: usize) -> Ledger {
    let spec = chain(m, 1);
    let model = spec.build(PooledPriorSpec::log_pooling(vec![0.5; m]).unwrap()).unwrap();
    let cfg = DcConfig {
        n_particles: n,
        ..Default::default()
    };
    dc_melding_multi(&model, &cfg, 1).unwrap().ledger
}

/// Every column of node `id` holds `100·(id+1) + row` (one-based row).
fn coded(ledger: &mut Ledger) {
    for node in ledger.nodes.iter_mut().flatten() {
        let s = &node.state;
        let values = (0..s.len())
            .flat_map(|i| std::iter::repeat_n((100 * (node.id + 1) + i + 1) as f64, s.dim()))
            .collect();
        node.state = WeightedParticleSystem::new(s.labels().to_vec(), values, s.log_weights().to_vec()).unwrap();
    }
}

/// Top-down oracle: follow each output row into its merged input row and
/// from there into the children.
fn descend(ledger: &Ledger, id: usize, row: usize, out: &mut [f64]) {
    let node = ledger.nodes[id].as_ref().unwrap();
    if let Some((l, r)) = ledger.plan.nodes[id].children {
        let m = node.ancestry.as_slice()[row];
        descend(ledger, l, node.merge_left.as_ref().unwrap().as_slice()[m], out);
        descend(ledger, r, node.merge_right.as_ref().unwrap().as_slice()[m], out);
    }
    // a node's values supersede its children's on the blocks it moved
    for (k, l) in node.state.labels().iter().enumerate() {
        let c = ledger.labels.iter().position(|g| g == l).unwrap();
        out[c] = node.state.row(row)[k];
    }
}

fn oracle(ledger: &Ledger) -> Vec<f64> {
    let root = ledger.plan.root;
    let n = ledger.nodes[root].as_ref().unwrap().state.len();
    let d = ledger.labels.len();
    let mut out = vec![f64::NAN; n * d];
    for i in 0..n {
        descend(ledger, root, i, &mut out[i * d..(i + 1) * d]);
    }
    out
}

fn one(v: &[usize]) -> Option<IndexMultiset> {
    Some(IndexMultiset::from_one_based(v, 5).unwrap())
}

#[test]
fn five_particle_five_submodel_hand_trace() {
    let mut ledger = skeleton(5, 5);
    // nodes: 0 = {1}, 1 = {3}, 2 = {5}, 3 = {2} over (0, 1), root 4 = {4} over (3, 2)
    assert_eq!(ledger.plan.nodes[4].children, Some((3, 2)));
    assert_eq!(ledger.plan.nodes[3].children, Some((0, 1)));
    coded(&mut ledger);
    let root = ledger.nodes[4].as_mut().unwrap();
    root.ancestry = one(&[2, 2, 5, 1, 3]).unwrap();
    root.merge_left = one(&[3, 1, 1, 4, 5]);
    root.merge_right = one(&[5, 4, 3, 2, 1]);
    let n3 = ledger.nodes[3].as_mut().unwrap();
    n3.ancestry = one(&[4, 4, 2, 3, 1]).unwrap();
    n3.merge_left = one(&[2, 5, 5, 1, 3]);
    n3.merge_right = one(&[1, 1, 2, 4, 3]);

    let joint = extract_joint_samples(&ledger).unwrap();
    let code = |row: usize, label: &str| joint.row(row - 1)[joint.column_index(label).unwrap()];
    // row 1: merged 2 -> node 3 row 1 (merged 4 -> node 0 row 1, node 1 row 4), node 2 row 4
    // row 3: merged 5 -> node 3 row 5 (merged 1 -> node 0 row 2, node 1 row 1), node 2 row 1
    // row 4: merged 1 -> node 3 row 3 (merged 2 -> node 0 row 5, node 1 row 1), node 2 row 5
    for (row, want) in [(1, [501, 401, 304, 101, 204]), (3, [503, 405, 301, 102, 201]), (4, [504, 403, 305, 105, 201])] {
        let got = [code(row, "psi_4"), code(row, "psi_2"), code(row, "psi_5"), code(row, "psi_1"), code(row, "psi_3")];
        assert_eq!(got, want.map(|v| v as f64), "row {row}");
    }
    // φ blocks come from the node that owns them last
    assert_eq!(code(1, "phi_1_2"), 401.0);
    assert_eq!(code(1, "phi_4_5"), 501.0);
    assert_eq!(joint.values(), oracle(&ledger).as_slice());
}

#[test]
fn random_ledgers_match_top_down_descent() {
    let mut rng = Streams::new(9, 0).stream(Purpose::Data, 0, 0);
    for m in 3..=9 {
        let n = 6;
        let mut ledger = skeleton(m, n);
        coded(&mut ledger);
        for node in ledger.nodes.iter_mut().flatten() {
            let mut draw = || IndexMultiset::from_zero_based((0..n).map(|_| rng.random_range(0..n)).collect(), n).unwrap();
            if node.merge_left.is_some() {
                node.ancestry = draw();
                node.merge_left = Some(draw());
                node.merge_right = Some(draw());
            }
        }
        let joint = extract_joint_samples(&ledger).unwrap();
        assert_eq!(joint.values(), oracle(&ledger).as_slice(), "M={m}");
    }
}

#[test]
fn ledger_and_inline_trajectories_agree() {
    for m in 3..=8 {
        let spec = chain(m, m as u64);
        let model = spec.build(PooledPriorSpec::log_pooling(vec![0.5; m]).unwrap()).unwrap();
        let cfg = DcConfig {
            n_particles: 64,
            ..Default::default()
        };
        let ledger = dc_melding_multi(&model, &cfg, 3).unwrap();
        let inline = dc_melding_multi(
            &model,
            &DcConfig {
                trajectories: TrajectoryMode::Inline,
                ..cfg
            },
            3,
        )
        .unwrap();
        assert_eq!(ledger.samples, inline.samples, "M={m}");
        assert_eq!(ledger.samples.values(), oracle(&ledger.ledger).as_slice(), "M={m}");
    }
}

#[test]
fn ledger_round_trips_through_disk() {
    let ledger = skeleton(6, 16);
    let dir = tempfile::tempdir().unwrap();
    ledger.write_dir(dir.path()).unwrap();
    let back = Ledger::read_dir(dir.path()).unwrap();
    assert_eq!(back, ledger);
    assert_eq!(extract_joint_samples(&back).unwrap(), extract_joint_samples(&ledger).unwrap());
}

#[test]
fn multi_stage_recovers_closed_form() {
    for m in 3..=7 {
        let spec = chain(m, m as u64);
        let lambda = vec![0.5; m];
        let model = spec.build(PooledPriorSpec::log_pooling(lambda.clone()).unwrap()).unwrap();
        let exact = spec.exact_posterior(&lambda).unwrap();
        let cfg = DcConfig {
            n_particles: 2000,
            ..Default::default()
        };
        let out = dc_melding_multi(&model, &cfg, 1).unwrap();
        let w = out.samples.normalized_weights().unwrap();
        for k in 0..model.dim() {
            let col = out.samples.column(k);
            let mean: f64 = col.iter().zip(&w).map(|(x, w)| x * w).sum();
            let z = (mean - exact.mean[k]) / exact.sd(k);
            assert!(z.abs() < 0.2, "M={m} coord {k}: z = {z}");
        }
    }
}
