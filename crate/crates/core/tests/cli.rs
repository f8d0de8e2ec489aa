use std::fs;

use wfqd_core::cli::{run, EXIT_OK, EXIT_RESOURCE, EXIT_USAGE};
use wfqd_core::harness::CSV_HEADER;

fn read(path: &std::path::Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn wf_sweep_writes_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("wf.csv");
    let raw = dir.path().join("raw.csv");
    let code = run([
        "wfqd", "wf", "--nf", "1..5", "--ne", "2,3,4", "--p0", "0.5", "--samples", "4", "--seed", "42", "--out",
        out.to_str().unwrap(), "--raw", raw.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(lines.count(), 15 * 12);
    assert!(text.contains("\nwf,5,4,,,,,0.5,delta,"));
    assert_eq!(read(&raw).lines().count(), 1 + 15 * 12 * 4);
}

#[test]
fn preset_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ewfs.csv");
    assert_eq!(run(["wfqd", "preset", "fig8", "--samples", "2", "--out", out.to_str().unwrap()]), EXIT_OK);
    let text = read(&out);
    assert_eq!(text.lines().count(), 1 + 21 * 4);
    assert!(text.contains("ewfs,,,7,3,1,1,0.5,varepsilon,"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(["wfqd", "wf", "--nf", "20", "--samples", "1"]), EXIT_RESOURCE);
    assert_eq!(run(["wfqd", "wf", "--nc", "2"]), EXIT_USAGE);
    assert_eq!(run(["wfqd", "wf", "--nf", "3..1"]), EXIT_USAGE);
    assert_eq!(run(["wfqd", "wf", "--p0", "2", "--samples", "1"]), EXIT_USAGE);
    assert_eq!(run(["wfqd", "preset", "fig5"]), EXIT_USAGE);
    assert_eq!(run(["wfqd", "bogus"]), EXIT_USAGE);
    assert_eq!(run(["wfqd", "inspect", "--nf", "4", "--ne", "4"]), EXIT_RESOURCE);
    assert_eq!(run(["wfqd", "ewfs", "--nc", "8", "--nec", "3", "--samples", "1"]), EXIT_RESOURCE);
    assert_eq!(run(["wfqd", "--help"]), EXIT_OK);
}

fn inspect(dir: &std::path::Path, name: &str, p0: &str) -> String {
    let out = dir.join(name);
    let code = run(["wfqd", "inspect", "--nf", "3", "--ne", "4", "--p0", p0, "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    read(&out)
}

fn entries(dump: &str) -> Vec<(usize, usize, f64)> {
    dump.lines()
        .filter(|l| !l.starts_with('%'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn inspect_dump_is_block_diagonal_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = inspect(dir.path(), "a.mtx", "0.5");
    let b = inspect(dir.path(), "b.mtx", "0.5");
    assert_eq!(a, b);
    assert!(a.starts_with("%%MatrixMarket matrix coordinate real general\n"));
    let size_line = a.lines().find(|l| !l.starts_with('%')).unwrap();
    let e = entries(&a);
    assert_eq!(size_line, format!("256 256 {}", e.len()));
    // pointer sectors are rows/columns 1..=128 and 129..=256
    assert!(e.iter().all(|&(i, j, _)| (i <= 128) == (j <= 128)));
    assert!(e.iter().any(|&(i, _, _)| i > 128));
    let trace: f64 = e.iter().filter(|x| x.0 == x.1).map(|x| x.2).sum();
    assert!((trace - 1.0).abs() < 1e-12);

    let single = entries(&inspect(dir.path(), "c.mtx", "1"));
    assert!(single.iter().all(|&(i, j, _)| i <= 128 && j <= 128));
}
