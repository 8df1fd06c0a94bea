use super::*;
use crate::spectral::{matrix_cost, CostParams, Depth};
use crate::tensor::{gaussian_matrix, seeded_rng};
use crate::witness::{build_min_cost, penalty, LinearBlock};

fn identity_net(n: usize, depth: usize, bd: BlockDepth) -> NonlinResNetParams {
    let blocks = (0..depth).map(|_| NonlinBlock::zeros(n, bd)).collect();
    NonlinResNetParams::new(Matrix::identity(n), vec![0.0; n], Matrix::identity(n), vec![0.0; n], blocks).unwrap()
}

fn relu_1d() -> FplfSpec {
    FplfSpec::new(vec![
        FplfLayer { w: Matrix::from_diag(&[1.0]), b: vec![0.0] },
        FplfLayer { w: Matrix::from_diag(&[1.0]), b: vec![0.0] },
    ])
    .unwrap()
}

/// `x ↦ ReLU(w·x)` on R², factored through R¹.
fn relu_plan(domain: DomainBox) -> BottleneckPlan {
    let h1 = FplfSpec::new(vec![FplfLayer { w: Matrix::from_rows(&[&[0.8, -0.6]]), b: vec![0.1] }]).unwrap();
    BottleneckPlan::new(h1, relu_1d(), domain).unwrap()
}

fn box2(seed: u64) -> DomainBox {
    DomainBox::new(vec![-1.0, -1.0], vec![1.0, 1.0], 200, seed).unwrap()
}

#[test]
fn identity_embeddings_give_identity_map() {
    let net = identity_net(3, 2, BlockDepth::Two);
    assert_eq!(forward_nonlin(&net, &[1.0, -2.0, 0.5]).unwrap(), vec![1.0, -2.0, 0.5]);
    assert!(forward_nonlin(&net, &[1.0]).is_err());
}

#[test]
fn single_identity_block_doubles_nonnegative_input() {
    let net = NonlinResNetParams::new(
        Matrix::identity(2),
        vec![0.0; 2],
        Matrix::identity(2),
        vec![0.0; 2],
        vec![NonlinBlock::Depth1 { w: Matrix::identity(2), b: vec![0.0; 2] }],
    )
    .unwrap();
    assert_eq!(forward_nonlin(&net, &[0.5, 2.0]).unwrap(), vec![1.0, 4.0]);
    assert_eq!(forward_nonlin(&net, &[-0.5, 2.0]).unwrap(), vec![-0.5, 4.0]);
}

#[test]
fn biases_are_free() {
    let mut net = identity_net(2, 3, BlockDepth::One);
    let biased = NonlinBlock::Depth1 { w: Matrix::zeros(2, 2), b: vec![5.0, -3.0] };
    net = net.with_block(1, biased).unwrap();
    let zero_weights = NonlinResNetParams::new(
        Matrix::zeros(2, 2),
        vec![1.0; 2],
        Matrix::zeros(2, 2),
        vec![7.0; 2],
        net.blocks().to_vec(),
    )
    .unwrap();
    assert_eq!(penalty_nonlin(&zero_weights, 3.0), 0.0);
}

fn lift(linear: &crate::witness::LinearResNetParams) -> NonlinResNetParams {
    let n = linear.width();
    let blocks = linear
        .blocks()
        .iter()
        .map(|b| match b {
            LinearBlock::Depth1 { w } => NonlinBlock::Depth1 { w: w.clone(), b: vec![0.0; n] },
            LinearBlock::Depth2 { w1, w2 } => {
                NonlinBlock::Depth2 { w1: w1.clone(), b1: vec![0.0; n], w2: w2.clone(), b2: vec![0.0; n] }
            }
        })
        .collect();
    NonlinResNetParams::new(
        linear.w_u().clone(),
        vec![0.0; linear.d_out()],
        linear.w_e().clone(),
        vec![0.0; n],
        blocks,
    )
    .unwrap()
}

#[test]
fn penalty_matches_linear_definition() {
    let a = gaussian_matrix(2, 3, &mut seeded_rng(1));
    for bd in [BlockDepth::One, BlockDepth::Two] {
        let p = CostParams::new(0.4, Depth::Finite(3), bd, 3).unwrap();
        let w = build_min_cost(&a, &p).unwrap();
        let lifted = lift(&w.params);
        assert!((penalty_nonlin(&lifted, 0.4) - penalty(&w.params, 0.4)).abs() < 1e-14);
    }
}

#[test]
fn jacobian_in_linear_and_dead_regimes() {
    let mut rng = seeded_rng(2);
    let w = gaussian_matrix(3, 3, &mut rng).scale(0.3);
    let (w_u, w_e) = (gaussian_matrix(2, 3, &mut rng), gaussian_matrix(3, 2, &mut rng));
    let make = |bias: f64| {
        let blocks = vec![NonlinBlock::Depth1 { w: w.clone(), b: vec![bias; 3] }; 2];
        NonlinResNetParams::new(w_u.clone(), vec![0.0; 2], w_e.clone(), vec![0.0; 3], blocks).unwrap()
    };
    let x = [0.1, -0.2];
    let live = jacobian_at(&make(100.0), &x).unwrap();
    let r = w.plus_identity();
    let expected = &(&(&w_u * &r) * &r) * &w_e;
    assert!(live.sub(&expected).unwrap().max_abs() < 1e-12);
    let dead = jacobian_at(&make(-100.0), &x).unwrap();
    assert!(dead.sub(&(&w_u * &w_e)).unwrap().max_abs() < 1e-12);
}

#[test]
fn jacobian_flags_boundaries() {
    let net = NonlinResNetParams::new(
        Matrix::identity(1),
        vec![0.0],
        Matrix::identity(1),
        vec![0.0],
        vec![NonlinBlock::Depth1 { w: Matrix::identity(1), b: vec![0.0] }],
    )
    .unwrap();
    assert!(matches!(jacobian_at(&net, &[0.0]), Err(Error::Boundary { layer: 0, unit: 0 })));
    assert_eq!(jacobian_at(&net, &[1.0]).unwrap()[(0, 0)], 2.0);
    assert_eq!(jacobian_at(&net, &[-1.0]).unwrap()[(0, 0)], 1.0);
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..20 {
        for bd in [BlockDepth::One, BlockDepth::Two] {
            let net = random_network(seed, bd);
            let dom = DomainBox::new(vec![-2.0; net.d_in()], vec![2.0; net.d_in()], 100, seed).unwrap();
            for x in dom.samples() {
                if let Some(gap) = jacobian_fd_gap(&net, x, 1e-6).unwrap() {
                    assert!(gap < 1e-6, "seed {seed} {bd:?}: {gap}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 3000);
}

#[test]
fn fplf_jacobian_and_rank() {
    let dom = DomainBox::new(vec![-1.0], vec![1.0], 100, 3).unwrap();
    let r = jacobian_rank(&relu_1d(), &dom, 1e-9).unwrap();
    assert_eq!(r.rank, 1);
    assert_eq!(r.valid + r.rejected, 100);

    let a = &gaussian_matrix(3, 2, &mut seeded_rng(4)) * &gaussian_matrix(2, 3, &mut seeded_rng(5));
    let affine = FplfSpec::new(vec![FplfLayer { w: a, b: vec![1.0; 3] }]).unwrap();
    let dom3 = DomainBox::new(vec![-1.0; 3], vec![1.0; 3], 100, 6).unwrap();
    assert_eq!(jacobian_rank(&affine, &dom3, 1e-9).unwrap().rank, 2);

    let plan = relu_plan(box2(7));
    let dom2 = DomainBox::new(vec![-1.0; 2], vec![1.0; 2], 100, 8).unwrap();
    assert_eq!(jacobian_rank(&plan, &dom2, 1e-9).unwrap().rank, 1);
}

#[test]
fn rank_needs_a_valid_sample() {
    let kink = FplfSpec::new(vec![
        FplfLayer { w: Matrix::from_diag(&[1.0]), b: vec![0.0] },
        FplfLayer { w: Matrix::from_diag(&[1.0]), b: vec![0.0] },
    ])
    .unwrap();
    // Every sample sits on the kink once the box is squeezed onto it.
    let dom = DomainBox::new(vec![-1e-14], vec![1e-14], 5, 0).unwrap();
    assert!(matches!(jacobian_rank(&kink, &dom, 1e-9), Err(Error::AllSamplesDegenerate { rejected: 5 })));
}

#[test]
fn latin_hypercube_hits_every_stratum() {
    let dom = DomainBox::new(vec![0.0, -2.0], vec![1.0, 2.0], 50, 9).unwrap();
    for c in 0..2 {
        let mut hit = [false; 50];
        for x in dom.samples() {
            assert!(dom.contains(x));
            let u = (x[c] - dom.lower()[c]) / (dom.upper()[c] - dom.lower()[c]);
            hit[((u * 50.0) as usize).min(49)] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }
    assert_eq!(dom, DomainBox::new(vec![0.0, -2.0], vec![1.0, 2.0], 50, 9).unwrap());
    assert!(DomainBox::new(vec![1.0], vec![1.0], 10, 0).is_err());
}

#[test]
fn lower_bound_on_zero_and_linear_networks() {
    let dom = DomainBox::new(vec![-1.0; 2], vec![1.0; 2], 30, 1).unwrap();
    let zero = NonlinResNetParams::new(
        Matrix::zeros(2, 2),
        vec![0.0; 2],
        Matrix::zeros(2, 2),
        vec![0.0; 2],
        vec![NonlinBlock::zeros(2, BlockDepth::One); 2],
    )
    .unwrap();
    let r = jacobian_lower_bound_check(&zero, 1.0, BlockDepth::One, &dom).unwrap();
    assert_eq!((r.max_linear_cost, r.penalty), (0.0, 0.0));
    assert!(r.holds);

    // Huge positive biases keep every unit active: a linear network in
    // disguise. Lifting a minimum-cost witness makes the bound tight.
    let a = gaussian_matrix(2, 2, &mut seeded_rng(11));
    let p = CostParams::new(0.5, Depth::Finite(3), BlockDepth::One, 2).unwrap();
    let w = build_min_cost(&a, &p).unwrap();
    let mut net = lift(&w.params);
    for i in 0..3 {
        let NonlinBlock::Depth1 { w, .. } = &net.blocks()[i] else { unreachable!() };
        net = net.with_block(i, NonlinBlock::Depth1 { w: w.clone(), b: vec![1e3; 2] }).unwrap();
    }
    let r = jacobian_lower_bound_check(&net, 0.5, BlockDepth::One, &dom).unwrap();
    assert!(r.holds);
    assert!((r.max_linear_cost - r.penalty).abs() < 1e-9 * r.penalty, "{r:?}");
    assert!(jacobian_lower_bound_check(&net, 0.5, BlockDepth::Two, &dom).is_err());
}

#[test]
fn lower_bound_is_tight_on_lifted_witness() {
    let a = gaussian_matrix(2, 2, &mut seeded_rng(12));
    let dom = DomainBox::new(vec![-1.0; 2], vec![1.0; 2], 20, 2).unwrap();
    let p = CostParams::new(0.3, Depth::Finite(4), BlockDepth::Two, 2).unwrap();
    let net = lift(&build_min_cost(&a, &p).unwrap().params);
    // Witness blocks are PSD-diagonal in a rotated basis, so some units may
    // be dead at a sample; the inequality must hold regardless.
    let r = jacobian_lower_bound_check(&net, 0.3, BlockDepth::Two, &dom).unwrap();
    assert!(r.holds);
    assert!(r.max_linear_cost <= matrix_cost(&a, &p).unwrap().total + 1e-9);
}

#[test]
fn random_networks_satisfy_lower_bound() {
    for seed in 0..40 {
        for bd in [BlockDepth::One, BlockDepth::Two] {
            let net = random_network(seed, bd);
            let dom = DomainBox::new(vec![-1.0; net.d_in()], vec![1.0; net.d_in()], 20, seed).unwrap();
            let r = jacobian_lower_bound_check(&net, 0.5, bd, &dom).unwrap();
            assert!(r.holds, "seed {seed} {bd:?}: {r:?}");
        }
    }
}

#[test]
fn json_round_trips() {
    for bd in [BlockDepth::One, BlockDepth::Two] {
        let net = random_network(3, bd);
        let s = serde_json::to_string(&net).unwrap();
        assert_eq!(serde_json::from_str::<NonlinResNetParams>(&s).unwrap(), net);
    }
    let spec = relu_plan(box2(1)).h2().clone();
    let s = serde_json::to_string(&spec).unwrap();
    assert!(s.contains("\"input_dim\":1"));
    assert_eq!(serde_json::from_str::<FplfSpec>(&s).unwrap(), spec);
    let dom = box2(4);
    assert_eq!(serde_json::from_str::<DomainBox>(&serde_json::to_string(&dom).unwrap()).unwrap(), dom);
    let linear = build_min_cost(&Matrix::identity(2), &CostParams::new(1.0, Depth::Finite(2), BlockDepth::One, 2).unwrap()).unwrap();
    assert!(serde_json::from_value::<NonlinResNetParams>(linear.params.to_json()).is_err());
}

fn identity_plan() -> BottleneckPlan {
    let dom = DomainBox::new(vec![0.0], vec![2.0], 100, 5).unwrap();
    BottleneckPlan::new(relu_1d_single(), FplfSpec::identity(1), dom).unwrap()
}

/// Identity on R¹, one affine layer (nonnegative on the plan's box).
fn relu_1d_single() -> FplfSpec {
    FplfSpec::identity(1)
}

#[test]
fn plan_shift_preserves_composition() {
    let plan = relu_plan(box2(3));
    assert!(plan.shift()[0] > 0.9);
    for x in plan.domain().samples() {
        assert!(plan.h1().eval(x).unwrap()[0] >= SHIFT_MARGIN * 0.999);
        let direct = (0.8 * x[0] - 0.6 * x[1] + 0.1).max(0.0);
        assert!((plan.eval(x).unwrap()[0] - direct).abs() < 1e-12);
    }
    assert!(plan.clone().with_scales(2.0, 1.0, 3.0).is_err());
    assert!(plan.clone().with_scales(2.0, 4.0, 0.5).is_err());
    assert!(plan.clone().with_replication(0).is_err());
    let bad = BottleneckPlan::new(FplfSpec::identity(2), FplfSpec::identity(1), box2(1));
    assert!(matches!(bad, Err(Error::InvalidPlan(_))));
}

#[test]
fn depth2_identity_plan_penalty_accounting() {
    let plan = identity_plan();
    let (lambda, depth) = (1e-4, 1024);
    let b = build_bottleneck_depth2(&plan, depth, plan.required_width(), lambda).unwrap();
    assert_eq!((b.l1, b.l2, b.l_int), (1, 0, 1023));
    let rep = verify_representation(&b.params, &plan, plan.domain(), 1e-9).unwrap();
    assert!(rep.passed, "{rep:?}");
    let l_int = b.l_int as f64;
    let middle = lambda * l_int * ((1.0 / lambda).powf(1.0 / l_int) - 1.0);
    let expected = 0.5 * lambda * b.simulation_norm_sq + middle + 0.5 * lambda * 2.0;
    assert!((b.penalty - expected).abs() < 1e-12 * expected);
    assert!((b.simulation_norm_sq - 2.0).abs() < 1e-12);
}

#[test]
fn unit_tau_zeroes_the_middle() {
    let plan = identity_plan();
    let b2 = build_bottleneck_depth2(&plan, 5, 2, 1.0).unwrap();
    let b1 = build_bottleneck_depth1(&plan.clone().with_replication(1).unwrap(), 5, 2, 1.0).unwrap();
    for b in [b2, b1] {
        for blk in &b.params.blocks()[b.l1..b.l1 + b.l_int] {
            assert_eq!(blk.weight_norm_sq(), 0.0);
        }
        assert!(verify_representation(&b.params, &plan, plan.domain(), 1e-12).unwrap().passed);
    }
}

#[test]
fn depth2_relu_plan_reproduces_target() {
    let plan = relu_plan(box2(11));
    let b = build_bottleneck_depth2(&plan, 64, plan.required_width(), 1e-5).unwrap();
    let rep = verify_representation(&b.params, &plan, plan.domain(), 1e-6).unwrap();
    assert!(rep.passed, "{rep:?}");
    for blk in &b.params.blocks()[b.l1..b.l1 + b.l_int] {
        match blk {
            NonlinBlock::Depth2 { b1, b2, .. } => assert!(b1.iter().chain(b2).all(|&v| v == 0.0)),
            _ => unreachable!(),
        }
    }
}

#[test]
fn build_errors() {
    let plan = relu_plan(box2(1));
    let n = plan.required_width();
    assert!(matches!(build_bottleneck_depth2(&plan, 64, n - 1, 0.1), Err(Error::InsufficientWidth { .. })));
    assert!(matches!(build_bottleneck_depth2(&plan, 2, n, 0.1), Err(Error::InsufficientBudget { depth: 2, needed: 3 })));
    let m3 = plan.clone().with_replication(3).unwrap();
    assert!(matches!(build_bottleneck_depth1(&m3, 6, n, 0.1), Err(Error::InsufficientBudget { needed: 7, .. })));
    assert!(build_bottleneck_depth2(&plan, 64, n, 0.0).is_err());
}

#[test]
fn corrupted_middle_block_is_detected() {
    let plan = identity_plan();
    let lambda = 1e-3;
    let b = build_bottleneck_depth2(&plan, 40, 2, lambda).unwrap();
    let broken = b.params.with_block(b.l1 + 3, NonlinBlock::zeros(2, BlockDepth::Two)).unwrap();
    let rep = verify_representation(&broken, &plan, plan.domain(), 1e-6).unwrap();
    assert!(!rep.passed);
    // Losing one factor τ^{1/L_int} scales the shifted output y + s.
    let factor = 1.0 - (1.0 / lambda).powf(-1.0 / b.l_int as f64);
    let expected = factor * (plan.domain().upper()[0] + plan.shift()[0]);
    assert!((rep.max_deviation - expected).abs() < 0.02 * expected, "{} vs {expected}", rep.max_deviation);
}

#[test]
fn homogeneity_of_scales() {
    let plan = relu_plan(box2(13));
    let n = plan.required_width();
    let lambda = 1e-3;
    let s = Scales::for_lambda(lambda);
    let base = build_bottleneck_depth2(&plan, 30, n, lambda).unwrap();
    let c = 7.5;
    let rescaled_plan = plan.clone().with_scales(c * s.alpha, c * s.beta, s.tau).unwrap();
    let rescaled = build_bottleneck_depth2(&rescaled_plan, 30, n, lambda).unwrap();
    for x in plan.domain().samples() {
        let (a, b) = (base.params.eval(x).unwrap(), rescaled.params.eval(x).unwrap());
        assert!((a[0] - b[0]).abs() < 1e-9);
    }
}

#[test]
fn depth1_single_copy_is_exact() {
    let plan = relu_plan(box2(17)).with_replication(1).unwrap();
    let lambda = (-1.0f64).exp();
    let b = build_bottleneck_depth1(&plan, 8, plan.required_width(), lambda).unwrap();
    assert_eq!(b.replication, 1);
    assert!(verify_representation(&b.params, &plan, plan.domain(), 1e-9).unwrap().passed);
}

#[test]
fn depth1_identity_plan_budget() {
    let plan = identity_plan();
    let (lambda, depth) = (1e-4, 2048);
    let b = build_bottleneck_depth1(&plan, depth, 2, lambda).unwrap();
    let m = (depth as f64 / (1.0 / lambda).ln()).floor() as usize;
    assert_eq!(b.replication, m);
    assert_eq!(b.l_int, depth - m);
    let l_int = b.l_int as f64;
    let middle = lambda * depth as f64 * l_int * ((1.0 / lambda).powf(1.0 / l_int) - 1.0).powi(2);
    let sim = lambda * depth as f64 * b.simulation_norm_sq;
    assert!((b.simulation_norm_sq - 1.0 / m as f64).abs() < 1e-12);
    assert!((b.penalty - (middle + sim + lambda)).abs() < 1e-10 * b.penalty);
    assert!(middle > 0.8 * b.penalty);
    assert!(verify_representation(&b.params, &plan, plan.domain(), 1e-6).unwrap().passed);
}

#[test]
fn depth2_scaling_window() {
    // ratio ∈ [k, k(1 + 5/log(1/λ)) + (C + d_in + d_out)/log(1/λ)]
    let plan = identity_plan();
    let mut prev = f64::INFINITY;
    for e in 3..=7 {
        let lambda = 10f64.powi(-e);
        let b = build_bottleneck_depth2(&plan, 4096, 2, lambda).unwrap();
        let log = (1.0 / lambda).ln();
        let ratio = b.penalty / (lambda * log);
        assert!(ratio >= 1.0 && ratio <= 1.0 + 5.0 / log + (b.simulation_norm_sq + 2.0) / log, "{ratio}");
        assert!(ratio < prev);
        prev = ratio;
    }
}
