use std::sync::Arc;

use ssnflow::assembly::Assembler;
use ssnflow::newton::{ContinuationSchedule, NewtonOptions, WarmStart};
use ssnflow::problems::poiseuille::{run_poiseuille_level, PoiseuilleCase};
use ssnflow::{BinghamForm, Execution, State};

#[test]
fn coarse_poiseuille_converges_and_is_accurate() {
    let case = PoiseuilleCase::new(1.0, BinghamForm::Product);
    let schedule = ContinuationSchedule::standard(WarmStart::Reuse);
    let (level, _) =
        run_poiseuille_level(&case, 0, &schedule, &NewtonOptions::new(1e-9, 60), Execution::default()).unwrap();
    assert!(level.converged(), "{:?}", level.failure);
    let last = level.stages.last().unwrap();
    assert!(last.l2_velocity < 5e-2, "{}", last.l2_velocity);
    assert!((last.centre_velocity - std::f64::consts::SQRT_2 / 4.0).abs() < 2e-2);
    for s in &level.stages {
        assert!(s.report.converged && *s.report.residual_norms.last().unwrap() <= 1e-9);
    }
}

#[test]
fn sequential_and_parallel_assembly_agree() {
    let case = PoiseuilleCase::new(1.0, BinghamForm::Product);
    let mesh = Arc::new(case.mesh(0).unwrap());
    let spec = case.spec(mesh, 1e-2).unwrap();
    let mut state = State::zeros(spec.layout());
    for (i, x) in state.coeffs_mut().iter_mut().enumerate() {
        *x = ((i * 7919) % 1000) as f64 / 500.0 - 1.0;
    }
    let seq = spec.clone().with_execution(Execution::Sequential);
    let par = spec.with_execution(Execution::Parallel);
    let (a, b) = (Assembler::new(&seq).unwrap(), Assembler::new(&par).unwrap());
    assert_eq!(a.residual(&state).unwrap(), b.residual(&state).unwrap());
}
