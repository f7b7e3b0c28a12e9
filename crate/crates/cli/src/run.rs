use std::thread;

use contractsolve_core::error::Error as CoreError;
use contractsolve_core::{
    budget_of, calibrate_lambda_with, compare, concave_envelope, default_loss_points,
    feasibility_classify, oracle, oracle_exhaustive, oracle_projected, rdut_value,
    recover_contract, recover_quantile, residual_check, solve_fbp_with, transform_problem,
    transformed_objective, validate_incentive_compatibility, Branch, Classification, FbpOptions,
    FbpSolution, Grid, TransformedProblem,
};

use crate::config::{Mode, RunConfig};
use crate::error::CliError;
use crate::output::{contract_table, num, quantile_table, Summary, Table};

/// Executes the configured mode and writes its artifacts.
pub fn run(config: &RunConfig, opts: &FbpOptions) -> Result<(), CliError> {
    match config.mode {
        Mode::Solve => solve(config, opts),
        Mode::Feasibility => feasibility(config),
        Mode::OracleCheck => oracle_check(config, opts),
        Mode::Envelope => envelope(config),
        Mode::Sweep => sweep(config, opts),
    }
}

fn transformed(config: &RunConfig) -> Result<TransformedProblem, CliError> {
    let grid = Grid::new(config.n).map_err(CliError::solver("grid"))?;
    transform_problem(config.problem(), grid).map_err(CliError::solver("transform"))
}

fn classification_name(c: &Classification) -> &'static str {
    match c {
        Classification::Infeasible { .. } => "infeasible",
        Classification::UniqueSolution { .. } => "unique",
        Classification::Feasible { .. } => "feasible",
    }
}

fn infeasible(tp: &TransformedProblem, threshold: f64) -> CliError {
    CliError::Solver {
        context: "infeasible".into(),
        source: CoreError::Infeasible {
            budget: tp.varpi,
            threshold,
        },
    }
}

fn header(config: &RunConfig, tp: &TransformedProblem, class: &Classification) -> Summary {
    let mut s = Summary::default();
    s.text("mode", config.mode)
        .text("n", config.n)
        .text("classification", classification_name(class))
        .num("varpi", tp.varpi)
        .num("threshold", class.threshold());
    s
}

fn solve(config: &RunConfig, opts: &FbpOptions) -> Result<(), CliError> {
    let spec = config.problem();
    let tp = transformed(config)?;
    let class = feasibility_classify(&tp);
    let mut summary = header(config, &tp, &class);
    let (quantile, table) = match &class {
        Classification::Infeasible { threshold } => return Err(infeasible(&tp, *threshold)),
        Classification::UniqueSolution { quantile, .. } => {
            let n = quantile.len();
            let missing = vec![f64::NAN; n];
            let table = quantile_table(&tp, &missing, &missing, quantile, &vec![Branch::Ode; n]);
            summary
                .text("lambda_source", "none")
                .num("budget", tp.budget_of_quantile(quantile));
            (quantile.clone(), table)
        }
        Classification::Feasible { .. } if config.lambda.is_none() && budget_is_slack(&tp) => {
            // λ = 0: nothing binds and Q̄ ≡ β
            let n = tp.grid.len();
            let quantile = vec![tp.beta; n];
            let zero = vec![0.0; n];
            let table = quantile_table(&tp, &zero, &zero, &quantile, &vec![Branch::Flat; n]);
            summary
                .num("lambda", 0.0)
                .text("lambda_source", "slack")
                .num("budget", tp.budget_of_quantile(&quantile));
            (quantile, table)
        }
        Classification::Feasible { .. } => {
            let sol = match config.lambda {
                Some(lambda) => {
                    let sol =
                        solve_fbp_with(&tp, lambda, opts).map_err(CliError::solver("solve"))?;
                    summary
                        .num("lambda", lambda)
                        .text("lambda_source", "override");
                    sol
                }
                None => {
                    let cal =
                        calibrate_lambda_with(&tp, opts).map_err(CliError::solver("calibrate"))?;
                    summary
                        .num("lambda", cal.lambda)
                        .text("lambda_source", "calibrated")
                        .text("calibration_iterations", cal.iterations)
                        .text("calibration_flat", cal.flat);
                    cal.solution
                }
            };
            let r = residual_check(&sol, &tp);
            summary
                .num("budget", budget_of(&sol, &tp))
                .num("residual_complementarity", r.max_complementarity)
                .num("residual_product", r.max_product)
                .num("obstacle_excess", r.max_obstacle_violation)
                .text("flat_region", sol.has_flat_region())
                .num("residual_derivative", r.max_derivative_violation)
                .text("policy_iterations", sol.policy_iterations)
                .text("newton_iterations", sol.newton_iterations);
            let table = quantile_table(
                &tp,
                &sol.delta,
                &sol.delta_prime,
                &sol.quantile,
                &sol.branch,
            );
            (sol.quantile, table)
        }
    };

    let g = recover_quantile(&quantile, &tp, &spec.loss).map_err(CliError::solver("recover"))?;
    let x = default_loss_points(&spec.loss, config.contract_points)
        .map_err(CliError::solver("recover"))?;
    let contract =
        recover_contract(&g, &spec.loss, spec.beta, &x).map_err(CliError::solver("recover"))?;
    let ic = validate_incentive_compatibility(&contract);
    let rdut = rdut_value(&g, &spec.utility, &spec.weighting).map_err(CliError::solver("rdut"))?;
    let objective =
        transformed_objective(&quantile, &tp, spec).map_err(CliError::solver("rdut"))?;
    summary
        .num("premium", contract.premium)
        .num("rdut", rdut)
        .num("transformed_objective", objective)
        .num(
            "rdut_relative_gap",
            (rdut - objective).abs() / objective.abs().max(1e-300),
        )
        .text(
            "ic_verdict",
            if ic.is_compliant() {
                "compliant"
            } else {
                "violated"
            },
        )
        .text("ic_violations", ic.count)
        .num("ic_worst_magnitude", ic.worst_magnitude);

    table.write(&config.out_dir, "quantile.csv")?;
    contract_table(&contract).write(&config.out_dir, "contract.csv")?;
    summary.write(&config.out_dir)
}

fn feasibility(config: &RunConfig) -> Result<(), CliError> {
    let tp = transformed(config)?;
    let class = feasibility_classify(&tp);
    header(config, &tp, &class).write(&config.out_dir)?;
    match class {
        Classification::Infeasible { threshold } => Err(infeasible(&tp, threshold)),
        _ => Ok(()),
    }
}

/// `ϖ` is at least the budget of `Q ≡ β`.
fn budget_is_slack(tp: &TransformedProblem) -> bool {
    let ceiling = tp.budget_of_quantile(&vec![tp.beta; tp.grid.len()]);
    tp.varpi >= ceiling - 1e-7 * (1.0 + tp.varpi.abs())
}

fn lambda_for(
    config: &RunConfig,
    tp: &TransformedProblem,
    opts: &FbpOptions,
) -> Result<(FbpSolution, &'static str), CliError> {
    match config.lambda {
        Some(lambda) => Ok((
            solve_fbp_with(tp, lambda, opts).map_err(CliError::solver("solve"))?,
            "override",
        )),
        None if budget_is_slack(tp) => Err(CliError::Validation {
            field: "varpi".into(),
            detail: "the budget does not bind on this grid; pass --lambda".into(),
        }),
        None => Ok((
            calibrate_lambda_with(tp, opts)
                .map_err(CliError::solver("calibrate"))?
                .solution,
            "calibrated",
        )),
    }
}

fn oracle_check(config: &RunConfig, opts: &FbpOptions) -> Result<(), CliError> {
    let tp = transformed(config)?;
    let class = feasibility_classify(&tp);
    if let Classification::Infeasible { threshold } = class {
        return Err(infeasible(&tp, threshold));
    }
    let (sol, source) = lambda_for(config, &tp, opts)?;
    let lambda = sol.lambda;
    let projected = oracle_projected(&tp, lambda).map_err(CliError::solver("projected oracle"))?;
    let cmp = compare(&sol.quantile, &projected.quantile).map_err(CliError::solver("compare"))?;

    let mut summary = header(config, &tp, &class);
    summary
        .num("lambda", lambda)
        .text("lambda_source", source)
        .num("projected_sup_norm", cmp.sup_norm)
        .num("projected_mean_abs", cmp.mean_abs)
        .text("projected_sweeps", projected.sweeps)
        .num(
            "objective_fbp",
            oracle::lagrangian(&tp, lambda, &sol.quantile),
        )
        .num("objective_projected", projected.objective);

    let m = config.oracle_nodes;
    let mut table = Table::new(&["p", "Q", "Q_projected"]);
    for i in 0..tp.grid.len() {
        table.row(&[
            num(tp.grid.node(i)),
            num(sol.quantile[i]),
            num(projected.quantile[i]),
        ]);
    }
    if (config.n - 1) % (m - 1) == 0 {
        let exhaustive = oracle_exhaustive(&tp, lambda, m, config.oracle_levels)
            .map_err(CliError::solver("exhaustive oracle"))?;
        let stride = (config.n - 1) / (m - 1);
        let sampled: Vec<f64> = (0..m).map(|k| sol.quantile[k * stride]).collect();
        let gap = compare(&sampled, &exhaustive).map_err(CliError::solver("compare"))?;
        let spacing = (config.oracle_levels.max(2) - 1) as f64;
        let level = (0..m - 1)
            .map(|k| {
                tp.cell_bounds[k * stride..(k + 1) * stride]
                    .iter()
                    .sum::<f64>()
                    / spacing
            })
            .fold(0.0f64, f64::max);
        summary
            .text("exhaustive_nodes", m)
            .text("exhaustive_levels", config.oracle_levels)
            .num("exhaustive_sup_norm", gap.sup_norm)
            .num("exhaustive_level", level);
    } else {
        summary.text(
            "exhaustive_nodes",
            "skipped (grid.n - 1 not a multiple of oracle.nodes - 1)",
        );
    }
    table.write(&config.out_dir, "oracle.csv")?;
    summary.write(&config.out_dir)
}

fn envelope(config: &RunConfig) -> Result<(), CliError> {
    let values = config
        .envelope
        .as_ref()
        .expect("validated in envelope mode");
    let grid = Grid::new(values.len()).map_err(CliError::solver("grid"))?;
    let env = concave_envelope(values, &grid).map_err(CliError::solver("envelope"))?;
    let mut table = Table::new(&["p", "value", "envelope"]);
    for i in 0..values.len() {
        table.row(&[num(grid.node(i)), num(values[i]), num(env[i])]);
    }
    table.write(&config.out_dir, "envelope.csv")?;
    let gap = env
        .iter()
        .zip(values)
        .fold(0.0f64, |m, (e, v)| m.max(e - v));
    let mut summary = Summary::default();
    summary
        .text("mode", config.mode)
        .text("n", values.len())
        .num("max_lift", gap);
    summary.write(&config.out_dir)
}

fn sweep(config: &RunConfig, opts: &FbpOptions) -> Result<(), CliError> {
    let tp = transformed(config)?;
    let class = feasibility_classify(&tp);
    if let Classification::Infeasible { threshold } = class {
        return Err(infeasible(&tp, threshold));
    }
    let results: Vec<Result<FbpSolution, CoreError>> = thread::scope(|s| {
        let handles: Vec<_> = config
            .sweep_lambdas
            .iter()
            .map(|&lambda| {
                let tp = &tp;
                s.spawn(move || solve_fbp_with(tp, lambda, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let mut table = Table::new(&["lambda", "budget", "lagrangian", "residual"]);
    let mut ladder = Vec::with_capacity(results.len());
    for (&lambda, result) in config.sweep_lambdas.iter().zip(results) {
        let sol = result.map_err(CliError::solver(format!("solve at lambda = {lambda}")))?;
        let budget = budget_of(&sol, &tp);
        let value = oracle::lagrangian(&tp, lambda, &sol.quantile);
        table.row(&[num(lambda), num(budget), num(value), num(sol.residual)]);
        ladder.push((lambda, budget));
    }
    ladder.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = ladder.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8);
    table.write(&config.out_dir, "sweep.csv")?;
    let mut summary = header(config, &tp, &class);
    summary
        .text("lambdas", config.sweep_lambdas.len())
        .text("budget_nonincreasing", monotone);
    summary.write(&config.out_dir)
}
