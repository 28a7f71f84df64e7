use cipwave_core::geometry::{BoundaryTag, Layout};
use cipwave_core::laplace::v0_reference;
use cipwave_core::pipeline::{prepare_data, setup, stage1, stage2, stage2_inputs, ExperimentConfig, Stage2Inputs};
use cipwave_core::scenario::{Inclusion, Scenario, Shape};
use cipwave_core::stage1::{source_plane_z, update_tail};
use cipwave_core::stage2::{StopReason, Termination};
use cipwave_core::wave::{simulate_state, Collect, SourceSpec};
use cipwave_core::RectDomain;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn layout() -> Layout {
    Layout::new(
        RectDomain::square_2d(-0.56, 0.56, -0.16, 0.1).unwrap(),
        RectDomain::square_2d(-0.5, 0.5, -0.1, 0.04).unwrap(),
    )
    .unwrap()
}

fn scenario(inclusions: Vec<Inclusion>) -> Scenario {
    Scenario {
        layout: layout(),
        background: 1.0,
        inclusions,
        noise: 0.0,
        src: SourceSpec::new(0.08, 30.0),
        eps_max: 25.0,
    }
}

#[test]
fn homogeneous_tail_matches_w0_tail() {
    let cfg = ExperimentConfig::new();
    let st = setup(&layout(), &cfg).unwrap();
    let sc = scenario(vec![]);
    let s_hi = cfg.gca.axis.s_hi();
    let tail = update_tail(&st.mesh, &st.grid, &st.omega, &st.axis, &sc.src, s_hi).unwrap();
    let z_src = source_plane_z(&st.grid, &sc.src);
    let map = st.omega.parent_map(&st.grid);
    let mut worst: f64 = 0.0;
    for (i, &p) in map.iter().enumerate() {
        let exact = v0_reference(&st.grid.point(p), s_hi, z_src);
        worst = worst.max(((tail[i] - exact) / exact).abs());
    }
    assert!(worst < 0.05, "worst relative tail error {worst}");
    // Recomputing with the same coefficient gives the same tail.
    let again = update_tail(&st.mesh, &st.grid, &st.omega, &st.axis, &sc.src, s_hi).unwrap();
    assert_eq!(tail, again);
}

#[test]
fn slab_deepens_tail_below_it() {
    let cfg = ExperimentConfig::new();
    let st = setup(&layout(), &cfg).unwrap();
    let src = SourceSpec::new(0.08, 30.0);
    let s_hi = cfg.gca.axis.s_hi();
    let hom = update_tail(&st.mesh, &st.grid, &st.omega, &st.axis, &src, s_hi).unwrap();
    let slab = st
        .mesh
        .with_values(
            &(0..st.mesh.len())
                .map(|c| {
                    let z = st.mesh.cell_center(c)[2];
                    if (-0.02..0.0).contains(&z) {
                        4.0
                    } else {
                        1.0
                    }
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
    let v = update_tail(&slab, &st.grid, &st.omega, &st.axis, &src, s_hi).unwrap();
    let og = &st.omega.grid;
    let below: Vec<usize> = (0..og.len()).filter(|&i| og.point(i)[2] < -0.03 && og.point(i)[0].abs() < 0.3).collect();
    assert!(!below.is_empty());
    assert!(below.iter().all(|&i| v[i] < hom[i]));
}

#[test]
fn null_scenario_stays_near_one() {
    let cfg = ExperimentConfig::new();
    let sc = scenario(vec![]);
    let st = setup(&sc.layout, &cfg).unwrap();
    let data = prepare_data(&sc, &st, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let res = stage1(&st, &sc.src, &data.g, &cfg, |_, _| {}).unwrap();
    let dev = res.eps.values().iter().fold(0.0f64, |m, v| m.max((v - 1.0).abs()));
    assert!(dev <= 0.2, "max deviation {dev}");
    assert!(res.history.iter().all(|r| r.eps_max <= 25.0));
}

#[test]
fn data_of_the_first_stage_coefficient_are_a_fixed_point() {
    let cfg = ExperimentConfig::new();
    let sc = scenario(vec![Inclusion {
        shape: Shape::Ball {
            center: [0.0, 0.0, -0.02],
            radius: 0.03,
        },
        eps: 3.0,
    }]);
    let st = setup(&sc.layout, &cfg).unwrap();
    let glob = cipwave_core::scenario::build_truth(&sc, &st.mesh).unwrap();
    // Gamma data simulated on the inversion grid with eps_glob itself.
    let nodal = glob.embed_in(&st.grid, 1.0);
    let gamma = sc.layout.region(&st.grid, BoundaryTag::Gamma).nodes;
    let g = cipwave_core::wave::simulate_forward(
        &nodal,
        &st.grid,
        &st.axis,
        &sc.src,
        &Collect {
            record: gamma,
            ..Default::default()
        },
    )
    .unwrap()
    .traces;
    let inputs: Stage2Inputs = stage2_inputs(&st, &sc.src, &glob, &g, &cfg).unwrap();
    // The immersed data coincide with the state traces of eps_glob.
    let state = simulate_state(
        &glob.embed_in(&st.state.grid, 1.0),
        &st.state.grid,
        &st.axis,
        &inputs.neumann,
        &Collect {
            record: inputs.data.nodes.clone(),
            ..Default::default()
        },
    )
    .unwrap();
    let scale = state.traces.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = state.traces.data.iter().zip(&inputs.data.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff <= 1e-10 * scale, "{diff} vs {scale}");
    let res = stage2(&st, &inputs, &glob, &cfg, |_, _| {}).unwrap();
    assert_eq!(res.meshes.len(), 1);
    assert_eq!(res.meshes[0].record.cg_iters, 0);
    assert_eq!(res.meshes[0].record.stop, StopReason::GradientSmall);
    assert_eq!(res.termination, Termination::Converged);
    assert_eq!(res.final_eps().values(), glob.values());
}
