//! Acceptance gate: runs all eleven verification criteria end to end and
//! fails unless every one passes. Prints one status line per criterion
//! (visible with `cargo test --test acceptance -- --nocapture`, and in the
//! failure output otherwise).

use mona_cli::checks::run_all_criteria;

#[test]
fn acceptance() {
    let work = std::env::temp_dir().join(format!("mona-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&work).expect("creating scratch dir");

    let criteria = run_all_criteria(&work, None).expect("criteria must run to completion");
    assert_eq!(criteria.len(), 11, "all eleven criteria must execute");

    let mut lines = Vec::with_capacity(criteria.len());
    for criterion in &criteria {
        let line = criterion.format_line();
        println!("{line}");
        lines.push(line);
    }
    std::fs::remove_dir_all(&work).ok();

    let not_passed: Vec<&String> = criteria
        .iter()
        .zip(&lines)
        .filter(|(c, _)| !c.passed())
        .map(|(_, l)| l)
        .collect();
    assert!(
        not_passed.is_empty(),
        "acceptance criteria not satisfied:\n{}\n\nfull report:\n{}",
        not_passed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n"),
        lines.join("\n"),
    );
}
