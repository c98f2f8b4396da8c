// Scratch calibration harness (not part of the deliverable).
use shapectl_core::geom::{RigidTransform, Vec3};
use shapectl_core::objective::ObjectiveConfig;
use shapectl_core::plant::{ActuationVector, MembraneModel, Plant};
use shapectl_core::registration::{icp_pose, IcpConfig};
use shapectl_core::solver::{
    fixed_step_solve, hybrid_solve, FitConfig, ObjectiveContext, SolverConfig,
};

fn rot_about_center(deg: f64) -> RigidTransform {
    let c = Vec3::new(150.0, 225.0, 0.0);
    let r = RigidTransform::from_axis_angle(Vec3::z(), deg.to_radians(), Vec3::zeros());
    RigidTransform {
        rotation: r.rotation,
        translation: c - r.rotation * c,
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());

    if which == "icp" || which == "all" {
        println!("=== ICP recovery ===");
        let model = MembraneModel::with_channels(4);
        let a = ActuationVector(vec![12.0, 8.0, 6.0, 10.0]);
        let target = shapectl_core::plant::make_reachable_target(&model, &a).unwrap();
        let mut plant = Plant::new(model, 7);
        let ctx = ObjectiveContext::new(
            target.clone(),
            FitConfig::default(),
            13,
            25,
            ObjectiveConfig::default_for_channels(4),
        )
        .unwrap();
        // observation at the same actuation; samples from the pipeline
        let eval = ctx
            .evaluate(&mut plant, &a, &RigidTransform::identity())
            .unwrap();
        for iters in [50usize, 100, 200, 400] {
            for deg in [5.0, 10.0, 20.0, 40.0] {
                let axis = Vec3::new(0.15, 0.1, 1.0); // mostly in-plane spin, slight tilt
                let c = Vec3::new(150.0, 225.0, 0.0);
                let r = RigidTransform::from_axis_angle(axis, (deg as f64).to_radians(), Vec3::zeros());
                let truth = RigidTransform {
                    rotation: r.rotation,
                    translation: c - r.rotation * c + Vec3::new(3.0, -4.0, 2.0),
                };
                let posed = target.transformed(&truth);
                let index = shapectl_core::geom::SpatialIndex::build(posed).unwrap();
                // samples are unrotated; the posed target comes back with
                // pose = truth^-1, which is what ICP should recover.
                let start = std::time::Instant::now();
                let mut cfg = IcpConfig::default();
                cfg.max_iterations = iters;
                let res = icp_pose(
                    &eval.samples,
                    &index,
                    RigidTransform::identity(),
                    &cfg,
                )
                .unwrap();
                let want = truth.invert();
                let rot_err = res
                    .transform
                    .compose(&want.invert())
                    .rotation_angle()
                    .to_degrees();
                let t_err = (res.transform.translation - want.translation).norm();
                println!(
                    "cap {iters:4} deg {deg:5}: rot_err {rot_err:.4} deg, t_err {t_err:.4} mm, rms {:.4}, iters {}, conv {}, {:?}",
                    res.final_rms, res.iterations, res.converged, start.elapsed()
                );
            }
        }
    }

    if which == "solve" || which == "all" {
        println!("=== hybrid vs gds, reachable k=4 from zero ===");
        let model = MembraneModel::with_channels(4);
        let a_star = ActuationVector(vec![12.0, 8.0, 6.0, 10.0]);
        let target = shapectl_core::plant::make_reachable_target(&model, &a_star).unwrap();
        let a0 = ActuationVector::zeros(4);
        let mut cfg = SolverConfig::default();
        cfg.i_max = 50;

        for (name, broyden) in [("hybrid", true), ("gds", false)] {
            let mut plant = Plant::new(model.clone(), 7);
            let ctx = ObjectiveContext::new(
                target.clone(),
                FitConfig::default(),
                13,
                25,
                ObjectiveConfig::default_for_channels(4),
            )
            .unwrap();
            let mut c = cfg.clone();
            c.broyden_enabled = broyden;
            let start = std::time::Instant::now();
            let res = hybrid_solve(&mut plant, &ctx, &a0, &c).unwrap();
            println!(
                "{name}: D {:.6} rms {:.4} mm, a {:?}, evals {}, steps {}, {} in {:?}",
                res.final_value.total,
                res.final_value.rms_distance(),
                res.a_opt.0.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>(),
                res.eval_count,
                res.trace.accepted_rows().len() - 1,
                res.terminated_by.as_str(),
                start.elapsed()
            );
            // print accepted D curve vs evals
            let curve: Vec<(u64, f64)> = res
                .trace
                .accepted_rows()
                .iter()
                .map(|r| (r.eval_count, (r.total * 1000.0).round() / 1000.0))
                .collect();
            println!("  curve: {curve:?}");
        }
    }

    if which == "misalign" || which == "all" {
        println!("=== icp ablation: 20 deg pre-rotated target ===");
        let model = MembraneModel::with_channels(4);
        let a_star = ActuationVector(vec![12.0, 8.0, 6.0, 10.0]);
        let target = shapectl_core::plant::make_reachable_target(&model, &a_star).unwrap();
        let posed = target.transformed(&rot_about_center(20.0));
        let a0 = ActuationVector::zeros(4);
        for icp_on in [true, false] {
            let mut plant = Plant::new(model.clone(), 7);
            let ctx = ObjectiveContext::new(
                posed.clone(),
                FitConfig::default(),
                13,
                25,
                ObjectiveConfig::default_for_channels(4),
            )
            .unwrap();
            let mut c = SolverConfig::default();
            c.icp_enabled = icp_on;
            c.i_max = 25;
            let res = hybrid_solve(&mut plant, &ctx, &a0, &c).unwrap();
            println!(
                "icp {icp_on}: D {:.4}, rms {:.4} mm, evals {}, {}",
                res.final_value.total,
                res.final_value.rms_distance(),
                res.eval_count,
                res.terminated_by.as_str()
            );
        }
    }

    if which == "baseline" || which == "all" {
        println!("=== fixed step baseline on unreachable target ===");
        let model = MembraneModel::with_channels(4);
        let a_star = ActuationVector(vec![12.0, 8.0, 6.0, 10.0]);
        let bump = shapectl_core::plant::BumpSpec {
            center: [80.0, 330.0],
            radius: 60.0,
            amplitude: 10.0,
        };
        let target =
            shapectl_core::plant::make_unreachable_target(&model, &a_star, &bump).unwrap();
        let a0 = ActuationVector::zeros(4);
        let mut cfg = SolverConfig::default();
        cfg.i_max = 60;
        {
            let mut plant = Plant::new(model.clone(), 7);
            let ctx = ObjectiveContext::new(
                target.clone(),
                FitConfig::default(),
                13,
                25,
                ObjectiveConfig::default_for_channels(4),
            )
            .unwrap();
            let res = hybrid_solve(&mut plant, &ctx, &a0, &cfg).unwrap();
            println!(
                "hybrid: D {:.4}, avg {:.4} mm, max {:.4} mm, evals {}",
                res.final_value.total,
                res.final_value.mean_distance(),
                res.final_value.max_distance(),
                res.eval_count
            );
        }
        for mult in [1.0, 1.5, 2.0] {
            let mut plant = Plant::new(model.clone(), 7);
            let ctx = ObjectiveContext::new(
                target.clone(),
                FitConfig::default(),
                13,
                25,
                ObjectiveConfig::default_for_channels(4),
            )
            .unwrap();
            let res = fixed_step_solve(&mut plant, &ctx, &a0, mult * 0.25, &cfg).unwrap();
            println!(
                "step {mult}x0.25: D {:.4}, avg {:.4} mm, max {:.4} mm, evals {}, steps {}",
                res.final_value.total,
                res.final_value.mean_distance(),
                res.final_value.max_distance(),
                res.eval_count,
                res.trace.accepted_rows().len() - 1
            );
        }
    }
}
