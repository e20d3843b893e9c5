use hrbif::bvp::*;
use hrbif::model::ModelParams;

fn main() {
    let p = ModelParams::new(2.9427488761, 2.7111448924);
    let connections = scan_connections(&p, 0.1, (-0.025, -0.012), 53, 1e-6).unwrap();
    let mut opts = HomoclinicSolveOptions::default();
    opts.n_intervals = 220;
    let hom = solve_homoclinic_from_shot(&p, &connections[0], &opts).unwrap();
    let settings = BvpContinuationSettings {
        ds0: 2e-3, ds_min: 1e-11, ds_max: 0.08, max_steps: 900,
        direction_component: hom.sol.mesh.len() + 1,
        refine_specials: false,
        newton: hrbif::bvp::mesh::BvpNewtonSettings { tol: 1e-9, max_iters: 14, max_step: 1.0 },
        q_ranges: vec![(1, 2.80, 3.05), (2, 2.40, 3.00)],
        grow: 1.3,
    };
    for dir in [1.0, -1.0] {
        let br = continue_homoclinic(&hom, dir, &settings).unwrap();
        let tr = br.parameter_trace();
        println!("== dir {dir}: {} pts, {:?}", br.branch.points.len(), br.branch.termination);
        for (k, pt) in br.branch.points.iter().enumerate() {
            if k % 60 == 0 || k + 1 == tr.len() {
                let sol = br.solution_at(k);
                println!("  {k:4}: b={:.5} I={:.5} tau={:6.1} sp={} of={:+.4} if={:+.4} bel={:+.3e}",
                    tr[k].0, tr[k].1, pt.sol.q[0], sol.spike_count(0.0), pt.tests[0], pt.tests[1], pt.tests[2]);
            }
        }
        println!("  turn: {:?}", br.turning_point);
        for sp in &br.branch.special_points {
            println!("  {:?} after {} at b={:.6} I={:.6}", sp.kind, sp.after_index, sp.sol.q[1], sp.sol.q[2]);
        }
    }
}
