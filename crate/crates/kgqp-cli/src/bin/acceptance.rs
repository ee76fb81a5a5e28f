use std::process::ExitCode;

fn main() -> ExitCode {
    let verdicts = kgqp_cli::acceptance::run_all();
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("{} of {} criteria passed", verdicts.len() - failed, verdicts.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
