use causelab::curiosity::{curiosity_reward, fit_bimodal};
use causelab::downstream::{task_reward, TaskKind, TaskSpec};
use causelab::envworld::{
    rollout, rollout_states, step, Action, ActionSequence, EnvSpec, ObsMask, SimState, Trajectory, WorldConstants,
    HORIZON,
};
use causelab::planner::{sample_plans, update_distribution, PlannerDistribution, Proposal, PLAN_DIM};
use causelab::trajdist::{dtw_exact, pairwise_distances, soft_dtw, DistanceMatrix};
use proptest::prelude::*;

fn traj(dim: usize, max_len: usize) -> impl Strategy<Value = Trajectory> {
    (1..=max_len)
        .prop_flat_map(move |len| prop::collection::vec(-3.0f64..3.0, len * dim))
        .prop_map(move |data| Trajectory::new(dim, data).unwrap())
}

fn traj_pair() -> impl Strategy<Value = (Trajectory, Trajectory)> {
    (1usize..=2).prop_flat_map(|dim| (traj(dim, 6), traj(dim, 6)))
}

fn traj_set() -> impl Strategy<Value = Vec<Trajectory>> {
    (1usize..=2, 2usize..=8).prop_flat_map(|(dim, n)| prop::collection::vec(traj(dim, 5), n))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn plan() -> impl Strategy<Value = ActionSequence> {
    prop::collection::vec(-10.0f64..10.0, PLAN_DIM).prop_map(|v| ActionSequence::from_flat(&v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_dtw_is_symmetric((a, b) in traj_pair(), gamma in 0.01f64..1.0) {
        let ab = soft_dtw(&a, &b, gamma).unwrap();
        let ba = soft_dtw(&b, &a, gamma).unwrap();
        prop_assert!(close(ab, ba, 1e-12), "{ab} vs {ba}");
    }

    #[test]
    fn soft_dtw_never_exceeds_exact((a, b) in traj_pair(), gamma in 0.001f64..1.0) {
        let soft = soft_dtw(&a, &b, gamma).unwrap();
        let exact = dtw_exact(&a, &b).unwrap();
        prop_assert!(soft <= exact + 1e-9, "{soft} > {exact}");
    }

    #[test]
    fn soft_dtw_translation_invariant((a, b) in traj_pair(), shift in -5.0f64..5.0) {
        let moved = |t: &Trajectory| Trajectory::new(t.dim(), t.points().flatten().map(|v| v + shift).collect()).unwrap();
        let base = soft_dtw(&a, &b, 0.1).unwrap();
        let shifted = soft_dtw(&moved(&a), &moved(&b), 0.1).unwrap();
        prop_assert!(close(base, shifted, 1e-9), "{base} vs {shifted}");
    }

    #[test]
    fn soft_dtw_scales_quadratically((a, b) in traj_pair(), c in 0.2f64..5.0, gamma in 0.01f64..1.0) {
        let scaled = |t: &Trajectory| Trajectory::new(t.dim(), t.points().flatten().map(|v| v * c).collect()).unwrap();
        let base = soft_dtw(&a, &b, gamma).unwrap();
        let big = soft_dtw(&scaled(&a), &scaled(&b), c * c * gamma).unwrap();
        prop_assert!(close(c * c * base, big, 1e-9), "{} vs {big}", c * c * base);
    }

    #[test]
    fn fit_terminates_within_n_rounds(trajs in traj_set()) {
        let dm = pairwise_distances(&trajs, 0.1).unwrap();
        let model = fit_bimodal(&dm, &trajs, 0.1).unwrap();
        prop_assert!(model.iterations <= trajs.len());
        let [m0, m1] = model.medoid_indices;
        prop_assert_ne!(m0, m1);
        prop_assert_eq!(model.assignment[m0], 0);
        prop_assert_eq!(model.assignment[m1], 1);
        prop_assert!(model.medoid_trajectories[0].total_displacement() <= model.medoid_trajectories[1].total_displacement());
    }

    #[test]
    fn assignment_points_to_nearer_medoid(trajs in traj_set()) {
        let dm = pairwise_distances(&trajs, 0.1).unwrap();
        let model = fit_bimodal(&dm, &trajs, 0.1).unwrap();
        let [m0, m1] = model.medoid_indices;
        for k in 0..trajs.len() {
            if k == m0 || k == m1 || trajs[k] == trajs[m0] || trajs[k] == trajs[m1] {
                continue;
            }
            let (d0, d1) = (dm.get(k, m0), dm.get(k, m1));
            let expected = if d0 <= d1 { 0 } else { 1 };
            prop_assert_eq!(model.assignment[k], expected);
        }
    }

    #[test]
    fn reward_permutation_and_label_invariant(trajs in traj_set(), seed in any::<u64>()) {
        let n = trajs.len();
        let dm = pairwise_distances(&trajs, 0.1).unwrap();
        let labels: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let r = curiosity_reward(&dm, &labels).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left((seed % n as u64) as usize);
        perm.swap(0, n - 1);
        let permuted = dm.select(&perm);
        let plabels: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(curiosity_reward(&permuted, &plabels).unwrap(), r);

        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert_eq!(curiosity_reward(&dm, &flipped).unwrap(), r);
    }

    #[test]
    fn fit_is_permutation_equivariant(trajs in traj_set(), rot in 0usize..8) {
        let n = trajs.len();
        let dm = pairwise_distances(&trajs, 0.1).unwrap();
        let model = fit_bimodal(&dm, &trajs, 0.1).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(rot % n);
        let ptrajs: Vec<Trajectory> = perm.iter().map(|&i| trajs[i].clone()).collect();
        let pdm = dm.select(&perm);
        let pmodel = fit_bimodal(&pdm, &ptrajs, 0.1).unwrap();
        let r = curiosity_reward(&dm, &model.assignment).unwrap();
        let pr = curiosity_reward(&pdm, &pmodel.assignment).unwrap();
        // ties in distances or displacements are broken by index, so only
        // generic instances must agree
        let separated = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v.windows(2).all(|w| w[1] - w[0] > 1e-9)
        };
        let distinct = separated((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| dm.get(i, j)).collect())
            && separated(trajs.iter().map(|t| t.total_displacement()).collect());
        if distinct {
            prop_assert_eq!(r, pr);
            let back: Vec<u8> = (0..n).map(|i| pmodel.assignment[perm.iter().position(|&p| p == i).unwrap()]).collect();
            prop_assert_eq!(back, model.assignment);
        }
    }

    #[test]
    fn inter_shift_adds_exactly_delta(trajs in traj_set(), seed in any::<u64>(), delta in 0.01f64..10.0) {
        let n = trajs.len();
        let dm = pairwise_distances(&trajs, 0.1).unwrap();
        let mut labels: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        labels[0] = 0;
        labels[n - 1] = 1;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dm.get(i, j) + if labels[i] != labels[j] { delta } else { 0.0 }).collect())
            .collect();
        let shifted = DistanceMatrix::from_rows(&rows).unwrap();
        let r0 = curiosity_reward(&dm, &labels).unwrap();
        let r1 = curiosity_reward(&shifted, &labels).unwrap();
        prop_assert!(close(r1 - r0, delta, 1e-9), "{} vs {delta}", r1 - r0);
    }

    #[test]
    fn trajectories_ignore_friction_while_airborne(
        mass in 0.1f64..0.5,
        size in 0.05f64..0.1,
        fx in prop::collection::vec(-10.0f64..10.0, HORIZON),
        lift in prop::collection::vec(0.0f64..1.0, HORIZON),
    ) {
        let w = WorldConstants::default();
        let weight = mass * w.gravity;
        let actions: Vec<Action> = fx.iter().zip(&lift).map(|(&x, &u)| Action::new(x, weight + 1e-6 + u * (w.force_max - weight - 1e-6))).collect();
        let plan = ActionSequence(actions.try_into().unwrap());
        let low = EnvSpec::new(0, mass, 0.2, size, w).unwrap();
        let high = EnvSpec::new(0, mass, 0.8, size, w).unwrap();
        prop_assert_eq!(rollout_states(&low, &plan).unwrap(), rollout_states(&high, &plan).unwrap());
    }

    #[test]
    fn extreme_actions_stay_in_bounds(
        mass in 0.05f64..2.0,
        mu in 0.0f64..1.5,
        size in 0.01f64..0.3,
        flat in prop::collection::vec(-1e6f64..1e6, PLAN_DIM),
    ) {
        let spec = EnvSpec::new(0, mass, mu, size, WorldConstants::default()).unwrap();
        let plan = ActionSequence::from_flat(&flat).unwrap();
        for s in rollout_states(&spec, &plan).unwrap() {
            prop_assert!(s.pos_x.is_finite() && s.vel_x.is_finite() && s.pos_z.is_finite() && s.vel_z.is_finite());
            prop_assert!(s.pos_z >= 0.0 && s.pos_z <= spec.top());
        }
        let clamped = ActionSequence::from_flat(&flat.iter().map(|v| v.clamp(-10.0, 10.0)).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(rollout(&spec, &plan, ObsMask::XZ).unwrap(), rollout(&spec, &clamped, ObsMask::XZ).unwrap());
    }

    #[test]
    fn grounded_block_under_static_friction_stays_put(mass in 0.1f64..0.5, mu in 0.2f64..0.8, u in 0.0f64..1.0, down in 0.0f64..1.0) {
        let spec = EnvSpec::new(0, mass, mu, 0.075, WorldConstants::default()).unwrap();
        let limit = mu * spec.weight();
        let a = Action::new((2.0 * u - 1.0) * limit, down * spec.weight());
        prop_assert_eq!(step(&spec, &SimState::default(), a).unwrap(), SimState::default());
    }

    #[test]
    fn task_reward_nonpositive_and_linear(p in plan(), target in 0.0f64..0.9, scale in 1.0f64..5000.0, travel in any::<bool>()) {
        let spec = EnvSpec::new(0, 0.3, 0.5, 0.075, WorldConstants::default()).unwrap();
        let states = rollout_states(&spec, &p).unwrap();
        let kind = if travel { TaskKind::Travel } else { TaskKind::Lifting };
        let task = TaskSpec { kind, target, scale };
        let r = task_reward(&task, &states).unwrap();
        prop_assert!(r <= 0.0);
        let doubled = task_reward(&TaskSpec { scale: 2.0 * scale, ..task }, &states).unwrap();
        prop_assert!(close(doubled, 2.0 * r, 1e-12));
    }

    #[test]
    fn samples_respect_bounds_and_floor(mean in prop::collection::vec(-15.0f64..15.0, PLAN_DIM), std in prop::collection::vec(0.0f64..20.0, PLAN_DIM), seed in any::<u64>()) {
        let dist = PlannerDistribution {
            proposal: Proposal::Gaussian { mean, std },
            force_max: 10.0,
            std_floor: 0.5,
        };
        let plans = sample_plans(&dist, 30, seed, 0).unwrap();
        for p in &plans {
            prop_assert!(p.to_flat().iter().all(|v| v.abs() <= 10.0));
        }
        let rewards: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let next = update_distribution(&dist, &plans, &rewards, 0.1).unwrap();
        match next.proposal {
            Proposal::Gaussian { std, .. } => prop_assert!(std.iter().all(|&s| s >= 0.5)),
            Proposal::Uniform => prop_assert!(false, "refit must be gaussian"),
        }
    }
}

#[test]
fn on_target_reward_is_exactly_zero() {
    let spec = EnvSpec::new(0, 0.3, 0.5, 0.075, WorldConstants::default()).unwrap();
    let states = rollout_states(&spec, &ActionSequence::default()).unwrap();
    let task = TaskSpec::new(TaskKind::Lifting, 0.0);
    assert_eq!(task_reward(&task, &states).unwrap(), 0.0);
}
