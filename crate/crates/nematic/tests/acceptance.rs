//! The ten acceptance criteria, one line each. Runs without the libtest
//! harness so the lines are printed even when everything passes.

use nematic::par::Rayon;
use nematic::validate::run_one;

fn main() {
    let exec = Rayon::new(0).expect("thread pool");
    let mut failed = Vec::new();
    for id in 1..=10 {
        let o = run_one(id, &exec);
        println!("{}", o.line());
        if !o.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
