//! End-to-end acceptance run, one PASS/FAIL line per criterion. It runs
//! without the test harness: output is never captured and the timing
//! measurements do not compete with other tests for the CPU.

use std::time::Instant;

use floodsim::scenario::cli::{cli_run, EXIT_OK};
use floodsim::validation::cases::{speedup_and_shares, worker_determinism};
use floodsim::validation::{run_case, CaseOptions, ValidationReport};

struct Ledger {
    failed: usize,
}

impl Ledger {
    fn record(&mut self, criterion: u32, title: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {criterion} {verdict} {title}: {detail}");
        if !ok {
            self.failed += 1;
        }
    }

    fn report(&mut self, criterion: u32, title: &str, reports: &[ValidationReport]) {
        let ok = reports.iter().all(|r| r.passed);
        let detail = reports
            .iter()
            .flat_map(|r| r.metrics.iter().filter(|m| !m.op.is_empty()))
            .map(|m| format!("{} = {:.4e} ({} {:e})", m.name, m.value, m.op, m.threshold))
            .collect::<Vec<_>>()
            .join(", ");
        self.record(criterion, title, ok, detail);
    }
}

fn case(name: &str) -> ValidationReport {
    let report = run_case(name, &CaseOptions::default()).unwrap_or_else(|e| panic!("{name}: {e}"));
    eprint!("{}", report.to_text());
    report
}

fn main() {
    let mut ledger = Ledger {
        failed: 0,
    };

    ledger.report(1, "lake at rest", &[case("lake-at-rest")]);
    ledger.report(2, "mass conservation", &[case("mass-ledger")]);
    ledger.report(3, "accuracy order", &[case("smooth-bump-convergence"), case("dam-break")]);

    let code = cli_run(["floodsim", "validate", "wet-dry"]);
    ledger.record(4, "wet/dry robustness", code == EXIT_OK, format!("validate wet-dry exit code {code}"));

    ledger.report(5, "skip equivalence", &[case("skip-equivalence")]);

    let clock = Instant::now();
    let (speedup, shares) = speedup_and_shares(&CaseOptions::default()).expect("speedup run");
    let secs = clock.elapsed().as_secs_f64();
    eprint!("{}{}", speedup.to_text(), shares.to_text());
    let ratio = speedup.metric("speedup").unwrap_or(f64::NAN);
    ledger.record(
        6,
        "block skipping speedup",
        speedup.passed && secs <= 600.0,
        format!("speedup = {ratio:.3} (>= 1.3), runtime {secs:.1} s (<= 600)"),
    );
    ledger.report(7, "stage cost profile", &[shares]);

    ledger.report(8, "zoom-in coupling", &[case("zoom-mass")]);

    let differing = worker_determinism(256, 1, 50, (1, 4)).expect("determinism run");
    ledger.record(
        9,
        "worker determinism",
        differing == 0,
        format!("cells differing between 1 and 4 workers = {differing}"),
    );

    if ledger.failed > 0 {
        eprintln!("{} criteria failed", ledger.failed);
        std::process::exit(1);
    }
}
