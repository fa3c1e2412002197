use dackf::algebra::{CMatrix, CVector, SecondOrderStats, C64};
use dackf::filters::{FilterInit, FilterPlan, FilterVariant, DEFAULT_PRIOR_SCALE};
use dackf::harness::builtin_projectile_config;
use dackf::model::{simulate, KnownInput, StateSpaceModel};
use dackf::network::{DiffusionWeights, NetworkTopology};
use dackf::stats::{NoiseSpec, RngStream};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
#[ignore]
fn dissect_projectile() {
    // single node, projectile dynamics
    let t = 0.05;
    let g = 9.8;
    let f = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(t, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
    let kv = CMatrix::from_column_slice(2, 1, &[c(t * t / 2.0, 0.0), c(t, 0.0)]);
    let input = CVector::from_vec(vec![c(0.0, -g * t * t / 2.0), c(0.0, -g * t)]);
    let h = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
    let eta = 0.85;

    for (label, state_phase, horizon, x0) in [
        ("aligned", 0.0, 40usize, c(20.0, 10.0)),
        ("quarter", std::f64::consts::FRAC_PI_2, 40, c(20.0, 10.0)),
        ("quarter-long", std::f64::consts::FRAC_PI_2, 200, c(20.0, 10.0)),
    ] {
        let drive_var = 5.0;
        let obs_var = 3.0;
        let pseudo_state = c(0.0, state_phase).exp() * c(eta * drive_var, 0.0);
        let model = StateSpaceModel::strictly_linear(
            f.clone(),
            vec![h.clone()],
            kv.clone(),
            Some(SecondOrderStats::scalar(drive_var, pseudo_state).unwrap()),
            Some(NoiseSpec::scalar(obs_var, c(eta * obs_var, 0.0)).unwrap()),
            KnownInput::Constant(input.clone()),
            CVector::from_vec(vec![c(0.0, 0.0), x0]),
        );
        let topo = NetworkTopology::from_edges(1, &[]).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
        let ckf =
            FilterPlan::new(FilterVariant::Dckf, &model, &topo, &weights, &init, horizon).unwrap();
        let ackf =
            FilterPlan::new(FilterVariant::Dackf, &model, &topo, &weights, &init, horizon).unwrap();
        let trials = 3000;
        let mut mse_ckf = vec![0.0; horizon];
        let mut mse_ackf = vec![0.0; horizon];
        for trial in 0..trials {
            let rng = RngStream::new(5).stream(trial);
            let record = simulate(&model, horizon, &rng).unwrap();
            let e1 = ckf.run_trial(&record.observations, &record.states).unwrap();
            let e2 = ackf.run_trial(&record.observations, &record.states).unwrap();
            for n in 0..horizon {
                mse_ckf[n] += e1.sq_err[(0, n)] / trials as f64;
                mse_ackf[n] += e2.sq_err[(0, n)] / trials as f64;
            }
        }
        print!("{label}: ");
        for n in [horizon / 4, horizon / 2, horizon - 1] {
            print!("step {:>3}: ckf {:.4} ackf {:.4} | ", n + 1, mse_ckf[n], mse_ackf[n]);
        }
        println!();
    }
}
