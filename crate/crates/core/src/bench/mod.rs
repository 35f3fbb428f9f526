//! Service-scenario benchmark: schema, trial execution, judging, reports.

pub mod judge;
pub mod report;
pub mod scenario;
pub mod synth;
pub mod synthetic;
pub mod trial;

pub use judge::{judge_result, Judge, OfflineJudge, RemoteJudge, RUBRIC_VERSION};
pub use report::{build_report, write_report, BenchmarkReport};
pub use scenario::{generate_scenarios, load_scenarios, Question, QuestionTag, Scenario};
pub use synthetic::{run_synthetic, synthetic_prompt, synthetic_trial, SyntheticTrial};
pub use trial::{
    run_trial, run_trial_with_prompt, stream_through, TrialOptions, TrialResult, TrialStatus,
};

use rayon::prelude::*;

use crate::agents::DuplexAgent;
use crate::error::{Error, Result};
use crate::prompt::HybridPrompt;

/// Creates one fresh agent per trial.
pub type AgentFactory<'a> = dyn Fn() -> Result<Box<dyn DuplexAgent>> + Sync + 'a;

/// Runs every question of every scenario with up to `jobs` concurrent
/// sessions. Results keep scenario then question order. Agent creation
/// failures yield failed trials.
pub fn run_benchmark(
    scenarios: &[Scenario],
    factory: &AgentFactory<'_>,
    judge: Option<&dyn Judge>,
    opts: &TrialOptions,
    jobs: usize,
) -> Result<Vec<TrialResult>> {
    if jobs == 0 {
        return Err(Error::invalid("jobs must be at least 1"));
    }
    let work: Vec<(usize, usize)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.questions.len()).map(move |q| (s, q)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        let prompts: Vec<Result<HybridPrompt>> = scenarios
            .par_iter()
            .map(|sc| trial::scenario_prompt(sc, opts).map(|(p, _)| p))
            .collect();
        work.par_iter()
            .map(|&(s, q)| {
                let scenario = &scenarios[s];
                let mut result = match (&prompts[s], factory()) {
                    (Ok(prompt), Ok(mut agent)) => {
                        run_trial_with_prompt(scenario, q, prompt, agent.as_mut(), opts)
                    }
                    (Err(e), _) => trial::failed_result(scenario, q, e),
                    (_, Err(e)) => trial::failed_result(scenario, q, &e),
                };
                result.agent_audio = None;
                if let (Some(j), false) = (judge, result.is_failed()) {
                    judge_result(&mut result, scenario, j);
                }
                result
            })
            .collect()
    });
    Ok(results)
}
